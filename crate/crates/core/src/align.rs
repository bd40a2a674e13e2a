//! Five-point landmark alignment.
//!
//! The estimator is the closed-form least-squares similarity transform
//! (uniform scale, rotation, translation). Parametrizing the linear part as
//! `[[a, -b], [b, a]]` excludes reflections outright: the determinant is
//! `a² + b² ≥ 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Left eye, right eye, nose tip, left mouth corner, right mouth corner, in
/// image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Landmarks5<T> {
    pub points: [[T; 2]; 5],
}

impl<T: Scalar> Landmarks5<T> {
    pub fn new(points: [[T; 2]; 5]) -> Result<Self> {
        let lm = Self { points };
        lm.validate()?;
        Ok(lm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmarks".into()));
        }
        Ok(())
    }

    fn centroid(&self) -> [T; 2] {
        let five = T::lit(5.0);
        let sx: T = self.points.iter().map(|p| p[0]).sum();
        let sy: T = self.points.iter().map(|p| p[1]).sum();
        [sx / five, sy / five]
    }

    /// Fails when the points are coincident or collinear: the smaller
    /// eigenvalue of their scatter matrix vanishes relative to the larger.
    pub fn check_non_degenerate(&self) -> Result<()> {
        self.validate()?;
        let [mx, my] = self.centroid();
        let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
        for p in &self.points {
            let (dx, dy) = (p[0] - mx, p[1] - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let trace = sxx + syy;
        if trace <= T::zero() {
            return Err(Error::DegenerateLandmarks("all points coincide"));
        }
        let det = sxx * syy - sxy * sxy;
        let half = trace / T::lit(2.0);
        let disc = (half * half - det).max(T::zero()).sqrt();
        let (lo, hi) = (half - disc, half + disc);
        if lo <= hi * T::lit(1e-10) {
            return Err(Error::DegenerateLandmarks("points are collinear"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Landmarks5<U> {
        Landmarks5 { points: self.points.map(|p| p.map(|v| U::lit(v.as_f64()))) }
    }
}

/// `p ↦ [[a, -b], [b, a]] · p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform<T> {
    pub a: T,
    pub b: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Scalar> SimilarityTransform<T> {
    pub fn identity() -> Self {
        Self { a: T::one(), b: T::zero(), tx: T::zero(), ty: T::zero() }
    }

    pub fn from_parts(scale: T, angle_rad: T, tx: T, ty: T) -> Self {
        Self { a: scale * angle_rad.cos(), b: scale * angle_rad.sin(), tx, ty }
    }

    #[inline]
    pub fn apply(&self, p: [T; 2]) -> [T; 2] {
        [self.a * p[0] - self.b * p[1] + self.tx, self.b * p[0] + self.a * p[1] + self.ty]
    }

    pub fn scale(&self) -> T {
        self.a.hypot(self.b)
    }

    pub fn angle(&self) -> T {
        self.b.atan2(self.a)
    }

    pub fn determinant(&self) -> T {
        self.a * self.a + self.b * self.b
    }

    /// 2×3 affine matrix `[[a, -b, tx], [b, a, ty]]`, the form image warpers
    /// take.
    pub fn to_affine(&self) -> [[T; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment<T> {
    pub transform: SimilarityTransform<T>,
    /// Root-mean-square distance between transformed source points and
    /// destination points.
    pub residual: T,
}

/// Least-squares similarity transform taking `src` onto `dst`.
pub fn estimate_alignment<T: Scalar>(src: &Landmarks5<T>, dst: &Landmarks5<T>) -> Result<Alignment<T>> {
    src.check_non_degenerate()?;
    dst.check_non_degenerate()?;
    let [sx, sy] = src.centroid();
    let [dx, dy] = dst.centroid();

    let (mut dot, mut cross, mut energy) = (T::zero(), T::zero(), T::zero());
    for (p, q) in src.points.iter().zip(&dst.points) {
        let (px, py) = (p[0] - sx, p[1] - sy);
        let (qx, qy) = (q[0] - dx, q[1] - dy);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        energy += px * px + py * py;
    }
    let a = dot / energy;
    let b = cross / energy;
    let transform = SimilarityTransform {
        a,
        b,
        tx: dx - (a * sx - b * sy),
        ty: dy - (b * sx + a * sy),
    };

    let mut sq = T::zero();
    for (p, q) in src.points.iter().zip(&dst.points) {
        let m = transform.apply(*p);
        let (ex, ey) = (m[0] - q[0], m[1] - q[1]);
        sq += ex * ex + ey * ey;
    }
    Ok(Alignment { transform, residual: (sq / T::lit(5.0)).sqrt() })
}

/// Canonical destination landmarks of the aligned face crop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTemplate {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub landmarks: Landmarks5<f64>,
}

const DEFAULT_TEMPLATE: &str = include_str!("../assets/crop_template_112.json");

impl Default for CropTemplate {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATE).expect("bundled crop template parses")
    }
}

impl CropTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        t.landmarks.check_non_degenerate()?;
        Ok(t)
    }

    /// Transform from image landmarks to this template.
    pub fn alignment_for<T: Scalar>(&self, landmarks: &Landmarks5<T>) -> Result<Alignment<T>> {
        estimate_alignment(landmarks, &self.landmarks.cast())
    }
}
