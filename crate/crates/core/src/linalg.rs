//! Dense real matrix exponential and principal logarithm.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::superop::ProcessMatrix;

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn solve(lhs: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    lhs.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const B: [f64; 14] = [
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
    let n = a.nrows();
    let nrm = norm1(a);
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * 2f64.powi(-s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let mut r = solve(&v - &u, &(&v + &u))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

pub fn expm(m: &DMatrix<f64>) -> Result<ProcessMatrix> {
    ProcessMatrix::from_matrix(expm_matrix(m)?)
}

/// Eigenvalues closer than this (in argument) to the negative real axis are refused.
const BRANCH_MARGIN: f64 = 1e-6;

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Square roots (Denman–Beavers) are taken until the argument is within 0.25 of
/// the identity, then `log A = 2 atanh((A − I)(A + I)⁻¹)` is summed as a series.
pub fn logm_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    for ev in a.complex_eigenvalues().iter() {
        if ev.norm() < 1e-12 || (ev.re < 0.0 && ev.im.abs() <= BRANCH_MARGIN * ev.norm()) {
            return Err(Error::BranchCut { re: ev.re, im: ev.im });
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut k = 0;
    while norm1(&(&x - &id)) > 0.25 {
        x = sqrtm_db(&x)?;
        k += 1;
        if k > 60 {
            return Err(Error::Numerical("inverse scaling did not approach the identity".into()));
        }
    }
    let z = solve((&x + &id).transpose(), &(&x - &id).transpose())?.transpose();
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z.clone();
    let mut j = 1usize;
    loop {
        term = &term * &z2;
        let coeff = 1.0 / (2 * j + 1) as f64;
        let inc = &term * coeff;
        sum += &inc;
        if inc.amax() < 1e-18 * sum.amax().max(1e-300) || j > 200 {
            break;
        }
        j += 1;
    }
    Ok(sum * (2.0 * 2f64.powi(k)))
}

fn sqrtm_db(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or_else(|| Error::Numerical("singular square-root iterate".into()))?;
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Numerical("singular square-root iterate".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).amax();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.amax() {
            return Ok(y);
        }
    }
    Err(Error::Numerical("Denman–Beavers iteration did not converge".into()))
}

/// Principal logarithm of a channel, refusing inputs near the branch cut.
pub fn log_near_identity(g: &ProcessMatrix) -> Result<DMatrix<f64>> {
    logm_matrix(g.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superop::ptm_from_unitary;
    use num_complex::Complex64;

    #[test]
    fn log_identity_is_zero() {
        let l = log_near_identity(&ProcessMatrix::identity(16)).unwrap();
        assert!(l.amax() < 1e-15);
    }

    #[test]
    fn exp_of_rotation_generator() {
        // generator of a Z rotation by angle t on the Bloch sphere
        let t = 0.37;
        let mut gen = DMatrix::zeros(4, 4);
        gen[(2, 1)] = t;
        gen[(1, 2)] = -t;
        let g = expm_matrix(&gen).unwrap();
        assert!((g[(1, 1)] - t.cos()).abs() < 1e-14);
        assert!((g[(2, 1)] - t.sin()).abs() < 1e-14);
    }

    #[test]
    fn exp_large_norm_uses_squaring() {
        let mut gen = DMatrix::zeros(4, 4);
        gen[(2, 1)] = 20.0;
        gen[(1, 2)] = -20.0;
        let g = expm_matrix(&gen).unwrap();
        assert!((g[(1, 1)] - 20f64.cos()).abs() < 1e-11);
    }

    #[test]
    fn branch_cut_refused() {
        // π rotation about Z has eigenvalues −1
        let u = nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(0.0, -1.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0)],
        );
        let g = ptm_from_unitary(&u).unwrap();
        assert!(matches!(log_near_identity(&g), Err(Error::BranchCut { .. })));
    }

    #[test]
    fn log_of_quarter_turn_is_principal() {
        let mut gen = DMatrix::zeros(4, 4);
        gen[(3, 2)] = std::f64::consts::FRAC_PI_2;
        gen[(2, 3)] = -std::f64::consts::FRAC_PI_2;
        let g = expm_matrix(&gen).unwrap();
        let back = logm_matrix(&g).unwrap();
        assert!((back - gen).amax() < 1e-12);
    }
}
