//! Continuous 6D rotation representation.
//!
//! The six numbers are the first two columns of a 3×3 matrix, stored
//! column-major: `r = [a1x, a1y, a1z, a2x, a2y, a2z]`. Gram–Schmidt on the
//! two columns plus a cross product yields a proper rotation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const DEGENERACY_EPS: f64 = 1e-12;

pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Orthonormal frame from a 6D vector, with the intermediate quantities
/// needed for differentiation.
#[derive(Debug, Clone)]
struct Frame {
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
    a2: Vector3<f64>,
    n1: f64,
    nu: f64,
}

fn frame(r: &[f64; 6]) -> Result<Frame> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotation("first column has zero norm"));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let nu = u.norm();
    if !(nu > DEGENERACY_EPS * a2.norm().max(1.0)) {
        return Err(Error::DegenerateRotation("columns are parallel or second column is zero"));
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(Frame {
        b1,
        b2,
        b3,
        a2,
        n1,
        nu,
    })
}

pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    let f = frame(r)?;
    Ok(Matrix3::from_columns(&[f.b1, f.b2, f.b3]))
}

/// Inverse map: the 6D representation of a rotation matrix (its first two columns).
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Rotation matrix together with its partial derivatives `∂R/∂r_i`.
pub fn rot6d_with_jacobian(r: &[f64; 6]) -> Result<(Matrix3<f64>, [Matrix3<f64>; 6])> {
    let f = frame(r)?;
    let rot = Matrix3::from_columns(&[f.b1, f.b2, f.b3]);
    let proj1 = (Matrix3::identity() - f.b1 * f.b1.transpose()) / f.n1;
    let proj2 = (Matrix3::identity() - f.b2 * f.b2.transpose()) / f.nu;
    let mut out = [Matrix3::zeros(); 6];
    for (i, d) in out.iter_mut().enumerate() {
        let mut da1 = Vector3::zeros();
        let mut da2 = Vector3::zeros();
        if i < 3 {
            da1[i] = 1.0;
        } else {
            da2[i - 3] = 1.0;
        }
        let db1 = proj1 * da1;
        let b1a2 = f.b1.dot(&f.a2);
        let du = da2 - f.b1 * (db1.dot(&f.a2) + f.b1.dot(&da2)) - db1 * b1a2;
        let db2 = proj2 * du;
        let db3 = db1.cross(&f.b2) + f.b1.cross(&db2);
        *d = Matrix3::from_columns(&[db1, db2, db3]);
    }
    Ok((rot, out))
}
