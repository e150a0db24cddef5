//! Regular simplex vertices and the orthogonal matrix that cycles them.

use nalgebra::{DMatrix, DVector};

use crate::error::{OveremError, Result};

/// k unit vertices of a regular simplex in R^d together with an orthogonal
/// `rotation` mapping vertex j to vertex j+1 (mod k).
///
/// Vertices live in the first k-1 coordinates; the rotation is the identity on
/// the remaining d-k+1 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFrame {
    k: usize,
    d: usize,
    vertices: Vec<DVector<f64>>,
    rotation: DMatrix<f64>,
    powers: Vec<DMatrix<f64>>,
}

/// Orthonormal basis of the sum-zero hyperplane of R^k, one column per axis.
fn helmert_basis(k: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(k, k - 1);
    for m in 0..k - 1 {
        let scale = (((m + 1) * (m + 2)) as f64).sqrt();
        for i in 0..=m {
            h[(i, m)] = 1.0 / scale;
        }
        h[(m + 1, m)] = -((m + 1) as f64) / scale;
    }
    h
}

/// Builds the frame for `k` components in dimension `d`.
pub fn build_simplex(k: usize, d: usize) -> Result<SimplexFrame> {
    if k < 2 {
        return Err(OveremError::Domain(format!("need k >= 2 components, got {k}")));
    }
    if d + 1 < k {
        return Err(OveremError::Dimension { expected: k - 1, actual: d });
    }
    let h = helmert_basis(k);
    let radius = (k as f64 / (k - 1) as f64).sqrt();
    let vertices = (0..k)
        .map(|i| {
            let mut v = DVector::zeros(d);
            for m in 0..k - 1 {
                v[m] = radius * h[(i, m)];
            }
            v
        })
        .collect();

    let mut perm = DMatrix::zeros(k, k);
    for i in 0..k {
        perm[((i + 1) % k, i)] = 1.0;
    }
    let sub = h.transpose() * perm * &h;
    let mut rotation = DMatrix::identity(d, d);
    rotation.view_mut((0, 0), (k - 1, k - 1)).copy_from(&sub);

    Ok(SimplexFrame::from_parts(k, vertices, rotation))
}

impl SimplexFrame {
    /// Assembles a frame without validating it; use [`check_frame`] to audit.
    pub fn from_parts(k: usize, vertices: Vec<DVector<f64>>, rotation: DMatrix<f64>) -> Self {
        let d = rotation.nrows();
        let mut powers = Vec::with_capacity(k);
        powers.push(DMatrix::identity(d, d));
        for j in 1..k {
            let next = &rotation * &powers[j - 1];
            powers.push(next);
        }
        SimplexFrame { k, d, vertices, rotation, powers }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// R^j for j in 0..k.
    pub fn power(&self, j: usize) -> &DMatrix<f64> {
        &self.powers[j]
    }

    pub fn powers(&self) -> &[DMatrix<f64>] {
        &self.powers
    }

    /// Location of component `j` (0-based): R^j theta.
    pub fn mean_of_component(&self, theta: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        if j >= self.k {
            return Err(OveremError::IndexOutOfRange { index: j, len: self.k });
        }
        if theta.len() != self.d {
            return Err(OveremError::Dimension { expected: self.d, actual: theta.len() });
        }
        Ok(&self.powers[j] * theta)
    }

    /// All k component locations.
    pub fn component_means(&self, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        self.powers.iter().map(|p| p * theta).collect()
    }

    pub fn fingerprint(&self) -> String {
        format!("simplex(k={},d={})", self.k, self.d)
    }
}

/// Largest violation of each frame invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub unit_norm: f64,
    pub vertex_sum: f64,
    pub inner_product: f64,
    pub cyclic_shift: f64,
    pub orthogonality: f64,
    pub period: f64,
    pub tol: f64,
}

impl FrameReport {
    pub fn worst(&self) -> f64 {
        [
            self.unit_norm,
            self.vertex_sum,
            self.inner_product,
            self.cyclic_shift,
            self.orthogonality,
            self.period,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tol
    }

    /// Names of the checks whose violation exceeds the tolerance.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("unit_norm", self.unit_norm),
            ("vertex_sum", self.vertex_sum),
            ("inner_product", self.inner_product),
            ("cyclic_shift", self.cyclic_shift),
            ("orthogonality", self.orthogonality),
            ("period", self.period),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v <= self.tol))
        .map(|(name, _)| name)
        .collect()
    }
}

pub fn check_frame(frame: &SimplexFrame, tol: f64) -> FrameReport {
    let k = frame.k;
    let d = frame.d;
    let vs = &frame.vertices;
    let target = -1.0 / (k as f64 - 1.0);

    let unit_norm = vs.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    let sum = vs.iter().fold(DVector::zeros(d), |acc, v| acc + v);
    let vertex_sum = sum.amax();
    let mut inner_product = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                inner_product = inner_product.max((vs[i].dot(&vs[j]) - target).abs());
            }
        }
    }
    let cyclic_shift = (0..k)
        .map(|i| (&frame.rotation * &vs[i] - &vs[(i + 1) % k]).amax())
        .fold(0.0, f64::max);
    let eye = DMatrix::<f64>::identity(d, d);
    let orthogonality = (frame.rotation.transpose() * &frame.rotation - &eye).amax();
    let period = (&frame.rotation * &frame.powers[k - 1] - &eye).amax();

    FrameReport { unit_norm, vertex_sum, inner_product, cyclic_shift, orthogonality, period, tol }
}
