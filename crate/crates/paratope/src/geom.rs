//! Backbone geometry kernels: vectors, local frames, torsions, radial basis
//! expansion, quaternions, and point-set RMSD.
//!
//! Everything here is pure and re-entrant. Positions are in Ångström.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("degenerate frame: backbone triangle area {area:.3e} below threshold")]
    DegenerateFrame { area: f64 },
    #[error("degenerate angle: {0}")]
    DegenerateAngle(&'static str),
    #[error("matrix is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("empty point set: {0}")]
    EmptySet(&'static str),
    #[error("point set length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid rbf spec: {0}")]
    BadRbfSpec(&'static str),
}

/// A 3-vector, Ångström units where positional.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

pub type Vec3d = Vec3<f64>;

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dist(&self, o: &Self) -> T {
        self.sub(o).norm()
    }

    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n <= T::zero() || !n.is_finite() {
            None
        } else {
            Some(self.scale(T::one() / n))
        }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn cast<U: Scalar>(&self) -> Vec3<U> {
        Vec3::new(
            U::from_f64_c(self.x.to_f64_c()),
            U::from_f64_c(self.y.to_f64_c()),
            U::from_f64_c(self.z.to_f64_c()),
        )
    }
}

/// Row-major 3×3 matrix. Rows of a frame's rotation are the local axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let o = T::one();
        let z = T::zero();
        Self {
            rows: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self {
            rows: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.rows[i])
    }

    pub fn transpose(&self) -> Self {
        let r = &self.rows;
        Self {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..3 {
                let mut s = T::zero();
                for (k, &v) in row.iter().enumerate() {
                    s = s + v * o.rows[k][j];
                }
                out[i][j] = s;
            }
        }
        Self { rows: out }
    }

    /// Apply to a column vector: `self * v`.
    pub fn apply(&self, v: &Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn det(&self) -> T {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Max absolute deviation of `self * selfᵀ` from the identity.
    pub fn orthonormality_defect(&self) -> T {
        let g = self.matmul(&self.transpose());
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                let d = (g.rows[i][j] - target).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

/// Local coordinate frame of a residue: rotation rows are the axes, origin is Cα.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame<T> {
    pub rotation: Mat3<T>,
    pub origin: Vec3<T>,
}

impl<T: Scalar> LocalFrame<T> {
    /// Express a world-space point in this frame's coordinates.
    pub fn to_local(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.apply(&p.sub(&self.origin))
    }
}

/// Gaussian radial basis layout: uniformly spaced centers, shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfSpec<T> {
    centers: Vec<T>,
    width: T,
}

impl<T: Scalar> RbfSpec<T> {
    pub fn new(centers: Vec<T>, width: T) -> Result<Self, GeomError> {
        if centers.is_empty() {
            return Err(GeomError::BadRbfSpec("no centers"));
        }
        if !(width > T::zero()) || !width.is_finite() {
            return Err(GeomError::BadRbfSpec("width must be positive"));
        }
        if centers.len() > 1 {
            let step = centers[1] - centers[0];
            if !(step > T::zero()) {
                return Err(GeomError::BadRbfSpec("centers must be strictly increasing"));
            }
            let tol = step * T::from_f64_c(1e-9);
            for w in centers.windows(2) {
                if ((w[1] - w[0]) - step).abs() > tol {
                    return Err(GeomError::BadRbfSpec("centers must be uniformly spaced"));
                }
            }
        }
        Ok(Self { centers, width })
    }

    /// `count` centers spanning `[lo, hi]` inclusive, width = spacing.
    pub fn uniform(lo: T, hi: T, count: usize) -> Result<Self, GeomError> {
        if count == 0 {
            return Err(GeomError::BadRbfSpec("no centers"));
        }
        if count == 1 {
            return Self::new(vec![lo], (hi - lo).max(T::one()));
        }
        let step = (hi - lo) / T::from_usize(count - 1).unwrap();
        let centers = (0..count)
            .map(|m| lo + step * T::from_usize(m).unwrap())
            .collect();
        Self::new(centers, step)
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn cast<U: Scalar>(&self) -> RbfSpec<U> {
        RbfSpec {
            centers: self.centers.iter().map(|&c| U::from_f64_c(c.to_f64_c())).collect(),
            width: U::from_f64_c(self.width.to_f64_c()),
        }
    }
}

/// Expand a distance into Gaussian basis values `exp(-(d-μ_m)²/(2ς²))`.
pub fn rbf_expand<T: Scalar>(d: T, spec: &RbfSpec<T>) -> Result<Vec<T>, GeomError> {
    if !d.is_finite() {
        return Err(GeomError::NonFinite("rbf distance"));
    }
    let two = T::from_f64_c(2.0);
    let denom = two * spec.width * spec.width;
    Ok(spec
        .centers
        .iter()
        .map(|&mu| {
            let r = d - mu;
            (-(r * r) / denom).exp()
        })
        .collect())
}

/// Minimum backbone-triangle area (Å²) below which a frame is degenerate.
pub const DEGENERACY_AREA: f64 = 1e-9;

/// Local frame from the N-Cα-C triangle.
///
/// Axis 1 points along Cα→C, axis 3 along the triangle normal
/// (C-CA)×(N-CA), axis 2 completes the right-handed set.
pub fn backbone_frame<T: Scalar>(
    n: Vec3<T>,
    ca: Vec3<T>,
    c: Vec3<T>,
) -> Result<LocalFrame<T>, GeomError> {
    let u = c.sub(&ca);
    let v = n.sub(&ca);
    let normal = u.cross(&v);
    let area = normal.norm() * T::from_f64_c(0.5);
    if !(area.to_f64_c() > DEGENERACY_AREA) {
        return Err(GeomError::DegenerateFrame {
            area: area.to_f64_c(),
        });
    }
    let a1 = u.normalized().ok_or(GeomError::DegenerateAngle("zero Cα-C bond"))?;
    let a3 = normal
        .normalized()
        .ok_or(GeomError::DegenerateAngle("zero triangle normal"))?;
    let a2 = a3.cross(&a1);
    Ok(LocalFrame {
        rotation: Mat3::from_rows(a1, a2, a3),
        origin: ca,
    })
}

/// Signed torsion angle about the p2-p3 axis, IUPAC convention, in (-π, π].
pub fn dihedral<T: Scalar>(
    p1: Vec3<T>,
    p2: Vec3<T>,
    p3: Vec3<T>,
    p4: Vec3<T>,
) -> Result<T, GeomError> {
    let b1 = p2.sub(&p1);
    let b2 = p3.sub(&p2);
    let b3 = p4.sub(&p3);
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let thr = T::from_f64_c(2.0 * DEGENERACY_AREA);
    if n1.norm() <= thr || n2.norm() <= thr {
        return Err(GeomError::DegenerateAngle("collinear bounding triple"));
    }
    let b2n = b2
        .normalized()
        .ok_or(GeomError::DegenerateAngle("coincident axis points"))?;
    let y = n1.cross(&n2).dot(&b2n);
    let x = n1.dot(&n2);
    let mut a = y.atan2(x);
    // canonicalize -π to π so the range is (-π, π]
    if a <= -T::from_f64_c(std::f64::consts::PI) {
        a = T::from_f64_c(std::f64::consts::PI);
    }
    Ok(a)
}

/// Angle at vertex p2, in [0, π].
pub fn bond_angle<T: Scalar>(p1: Vec3<T>, p2: Vec3<T>, p3: Vec3<T>) -> Result<T, GeomError> {
    let u = p1
        .sub(&p2)
        .normalized()
        .ok_or(GeomError::DegenerateAngle("coincident p1, p2"))?;
    let v = p3
        .sub(&p2)
        .normalized()
        .ok_or(GeomError::DegenerateAngle("coincident p3, p2"))?;
    let c = u.dot(&v).max(-T::one()).min(T::one());
    Ok(c.acos())
}

/// Unit quaternion (w, x, y, z) with w ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quaternion<T> {
    pub fn to_array(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotation matrix equivalent (for round-trip checks).
    pub fn to_matrix(&self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::from_f64_c(2.0);
        let one = T::one();
        Mat3 {
            rows: [
                [
                    one - two * (y * y + z * z),
                    two * (x * y - z * w),
                    two * (x * z + y * w),
                ],
                [
                    two * (x * y + z * w),
                    one - two * (x * x + z * z),
                    two * (y * z - x * w),
                ],
                [
                    two * (x * z - y * w),
                    two * (y * z + x * w),
                    one - two * (x * x + y * y),
                ],
            ],
        }
    }
}

/// Rotation matrix → unit quaternion, hemisphere fixed by w ≥ 0.
pub fn rotation_to_quaternion<T: Scalar>(r: &Mat3<T>) -> Result<Quaternion<T>, GeomError> {
    let defect = r.orthonormality_defect().to_f64_c();
    if defect > 1e-6 {
        return Err(GeomError::NotOrthonormal(defect));
    }
    let m = &r.rows;
    let one = T::one();
    let quarter = T::from_f64_c(0.25);
    let trace = m[0][0] + m[1][1] + m[2][2];
    // Shepperd's method: branch on the largest diagonal quantity.
    let (mut w, mut x, mut y, mut z);
    if trace > T::zero() {
        let s = (trace + one).sqrt() * T::from_f64_c(2.0);
        w = quarter * s;
        x = (m[2][1] - m[1][2]) / s;
        y = (m[0][2] - m[2][0]) / s;
        z = (m[1][0] - m[0][1]) / s;
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::from_f64_c(2.0);
        w = (m[2][1] - m[1][2]) / s;
        x = quarter * s;
        y = (m[0][1] + m[1][0]) / s;
        z = (m[0][2] + m[2][0]) / s;
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::from_f64_c(2.0);
        w = (m[0][2] - m[2][0]) / s;
        x = (m[0][1] + m[1][0]) / s;
        y = quarter * s;
        z = (m[1][2] + m[2][1]) / s;
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::from_f64_c(2.0);
        w = (m[1][0] - m[0][1]) / s;
        x = (m[0][2] + m[2][0]) / s;
        y = (m[1][2] + m[2][1]) / s;
        z = quarter * s;
    }
    let n = (w * w + x * x + y * y + z * z).sqrt();
    w = w / n;
    x = x / n;
    y = y / n;
    z = z / n;
    if w < T::zero() || (w == T::zero() && (x < T::zero() || (x == T::zero() && (y < T::zero() || (y == T::zero() && z < T::zero()))))) {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    Ok(Quaternion { w, x, y, z })
}

/// Exact minimum distance over all |A|×|B| point pairs.
pub fn min_pairwise_distance<T: Scalar>(a: &[Vec3<T>], b: &[Vec3<T>]) -> Result<T, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptySet("min_pairwise_distance"));
    }
    let mut best = T::infinity();
    for p in a {
        for q in b {
            let d = p.dist(q);
            if d < best {
                best = d;
            }
        }
    }
    Ok(best)
}

fn centroid<T: Scalar>(pts: &[Vec3<T>]) -> Vec3<T> {
    let mut c = Vec3::zero();
    for p in pts {
        c = c.add(p);
    }
    c.scale(T::one() / T::from_usize(pts.len()).unwrap())
}

/// Jacobi eigen-decomposition of a symmetric 4×4 matrix.
/// Returns the eigenvector of the largest eigenvalue.
fn top_eigenvector_sym4<T: Scalar>(m: [[T; 4]; 4]) -> [T; 4] {
    let mut a = m;
    let mut v = [[T::zero(); 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    let half = T::from_f64_c(0.5);
    for _ in 0..64 {
        // largest off-diagonal element
        let (mut p, mut q, mut off) = (0usize, 1usize, T::zero());
        for i in 0..4 {
            for j in (i + 1)..4 {
                if a[i][j].abs() > off {
                    off = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if off.to_f64_c() < 1e-15 {
            break;
        }
        let theta = half * (T::from_f64_c(2.0) * a[p][q]).atan2(a[p][p] - a[q][q]);
        let (s, c) = (theta.sin(), theta.cos());
        for k in 0..4 {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp + s * akq;
            a[k][q] = -s * akp + c * akq;
        }
        for k in 0..4 {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk + s * aqk;
            a[q][k] = -s * apk + c * aqk;
        }
        for row in v.iter_mut() {
            let (vkp, vkq) = (row[p], row[q]);
            row[p] = c * vkp + s * vkq;
            row[q] = -s * vkp + c * vkq;
        }
    }
    let mut best = 0;
    for i in 1..4 {
        if a[i][i] > a[best][best] {
            best = i;
        }
    }
    [v[0][best], v[1][best], v[2][best], v[3][best]]
}

/// Optimal proper rotation aligning Q onto P after centering (Horn's method).
pub fn optimal_rotation<T: Scalar>(p: &[Vec3<T>], q: &[Vec3<T>]) -> Result<Mat3<T>, GeomError> {
    if p.len() != q.len() {
        return Err(GeomError::LengthMismatch(p.len(), q.len()));
    }
    if p.len() < 3 {
        return Err(GeomError::EmptySet("superposition needs at least 3 points"));
    }
    let cp = centroid(p);
    let cq = centroid(q);
    // correlation matrix S = Σ (q - cq)(p - cp)ᵀ
    let mut s = [[T::zero(); 3]; 3];
    for (pp, qq) in p.iter().zip(q) {
        let u = qq.sub(&cq).to_array();
        let w = pp.sub(&cp).to_array();
        for (i, &ui) in u.iter().enumerate() {
            for (j, &wj) in w.iter().enumerate() {
                s[i][j] = s[i][j] + ui * wj;
            }
        }
    }
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    let k = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, syy - sxx - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, szz - sxx - syy],
    ];
    let e = top_eigenvector_sym4(k);
    let quat = Quaternion {
        w: e[0],
        x: e[1],
        y: e[2],
        z: e[3],
    };
    Ok(quat.to_matrix())
}

/// Uniform random proper rotation (verification harnesses).
pub fn random_rotation(rng: &mut impl rand::Rng) -> Mat3<f64> {
    loop {
        let q = [
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return Quaternion {
                w: q[0] / n,
                x: q[1] / n,
                y: q[2] / n,
                z: q[3] / n,
            }
            .to_matrix();
        }
    }
}

/// Cα RMSD between two equal-length point lists.
///
/// With `superpose = false` the RMSD is taken in the shared coordinate frame;
/// with `superpose = true` it is minimized over rigid transforms.
pub fn superpose_rmsd<T: Scalar>(
    p: &[Vec3<T>],
    q: &[Vec3<T>],
    superpose: bool,
) -> Result<T, GeomError> {
    if p.len() != q.len() {
        return Err(GeomError::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(GeomError::EmptySet("superpose_rmsd"));
    }
    let n = T::from_usize(p.len()).unwrap();
    if !superpose {
        let ss: T = p.iter().zip(q).map(|(a, b)| {
            let d = a.sub(b);
            d.dot(&d)
        }).sum();
        return Ok((ss / n).sqrt());
    }
    if p.len() < 3 {
        // with 1-2 points a rigid transform aligns them exactly
        return Ok(T::zero());
    }
    let r = optimal_rotation(p, q)?;
    let cp = centroid(p);
    let cq = centroid(q);
    let ss: T = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sub(&cp).sub(&r.apply(&b.sub(&cq)));
            d.dot(&d)
        })
        .sum();
    Ok((ss / n).max(T::zero()).sqrt())
}
