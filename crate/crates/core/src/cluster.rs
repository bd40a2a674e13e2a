//! DBSCAN over cosine distance `d(a, b) = 1 - cos(a, b)`.
//!
//! Labels are fully determined by the input order:
//! - a point is core when its closed `eps`-neighborhood (itself included)
//!   holds at least `min_pts` points;
//! - clusters are the connected components of core points, numbered in order
//!   of their lowest-indexed core point;
//! - a non-core point within `eps` of some core point joins the cluster of the
//!   lowest-indexed such core point, otherwise it is noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{clamp_unit, dot, norm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Cosine-distance radius.
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 4 }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 2.0) {
            return Err(Error::param("eps", format!("must lie in (0, 2), got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::param("min_pts", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cluster(usize),
    Noise,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    labels: Vec<Label>,
    core: Vec<bool>,
    cluster_count: usize,
}

impl Clustering {
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn is_core(&self, i: usize) -> bool {
        self.core[i]
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    /// Member indices per cluster, ascending within each cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    /// Rebuilds a clustering from stored labels and core flags. Cluster
    /// indices must be contiguous from 0.
    pub fn from_parts(labels: Vec<Label>, core: Vec<bool>) -> Result<Self> {
        if labels.len() != core.len() {
            return Err(Error::ShapeMismatch(format!("{} labels, {} core flags", labels.len(), core.len())));
        }
        let cluster_count = labels.iter().filter_map(|l| match l {
            Label::Cluster(c) => Some(c + 1),
            Label::Noise => None,
        }).max().unwrap_or(0);
        let mut used = vec![false; cluster_count];
        for (l, &c) in labels.iter().zip(&core) {
            match l {
                Label::Cluster(k) => used[*k] = true,
                Label::Noise if c => return Err(Error::ShapeMismatch("a core point is labeled noise".into())),
                Label::Noise => {}
            }
        }
        if used.contains(&false) {
            return Err(Error::ShapeMismatch("cluster indices are not contiguous".into()));
        }
        Ok(Self { labels, core, cluster_count })
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == Label::Noise).map(|(i, _)| i).collect()
    }

    /// Cluster indices ordered by size descending, ties by cluster index.
    pub fn clusters_by_size(&self) -> Vec<(usize, Vec<usize>)> {
        let mut cs: Vec<(usize, Vec<usize>)> = self.clusters().into_iter().enumerate().collect();
        cs.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        cs
    }
}

fn neighborhoods<T: Scalar, R: AsRef<[T]> + Sync>(points: &[R], eps: T, parallel: bool) -> Result<Vec<Vec<usize>>> {
    let dim = points[0].as_ref().len();
    let mut norms = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
        }
        let n = norm(p);
        if !n.is_finite() {
            return Err(Error::NonFinite("clustering input".into()));
        }
        if n == T::zero() {
            return Err(Error::ZeroNorm);
        }
        norms.push(n);
    }
    let row = |i: usize| -> Vec<usize> {
        let a = points[i].as_ref();
        (0..points.len())
            .filter(|&j| {
                let cos = clamp_unit(dot(a, points[j].as_ref()) / (norms[i] * norms[j]));
                T::one() - cos <= eps
            })
            .collect()
    };
    Ok(if parallel {
        (0..points.len()).into_par_iter().map(row).collect()
    } else {
        (0..points.len()).map(row).collect()
    })
}

/// Single-threaded DBSCAN.
pub fn dbscan<T: Scalar, R: AsRef<[T]> + Sync>(points: &[R], params: &ClusterParams) -> Result<Clustering> {
    dbscan_with(points, params, false)
}

/// DBSCAN with an optional parallel neighborhood precomputation. Output is
/// identical either way.
pub fn dbscan_with<T: Scalar, R: AsRef<[T]> + Sync>(
    points: &[R],
    params: &ClusterParams,
    parallel: bool,
) -> Result<Clustering> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyInput("dbscan needs at least one point"));
    }
    let nbrs = neighborhoods(points, T::lit(params.eps), parallel)?;
    let n = points.len();
    let core: Vec<bool> = nbrs.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut labels = vec![Label::Noise; n];
    let mut cluster_count = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !core[seed] || labels[seed] != Label::Noise {
            continue;
        }
        let c = cluster_count;
        cluster_count += 1;
        labels[seed] = Label::Cluster(c);
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &nbrs[p] {
                if core[q] && labels[q] == Label::Noise {
                    labels[q] = Label::Cluster(c);
                    stack.push(q);
                }
            }
        }
    }
    for i in 0..n {
        if !core[i] {
            // neighborhoods are ascending, so the first core hit is the lowest-indexed
            if let Some(&j) = nbrs[i].iter().find(|&&j| core[j]) {
                labels[i] = labels[j];
            }
        }
    }
    Ok(Clustering { labels, core, cluster_count })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_min_pts_one() {
        let c = dbscan(&[vec![1.0f64, 0.0]], &ClusterParams { eps: 0.5, min_pts: 1 }).unwrap();
        assert_eq!(c.labels(), &[Label::Cluster(0)]);
        assert!(c.noise().is_empty());
    }

    #[test]
    fn antipodal_points_split() {
        let pts = vec![vec![1.0f64, 0.0], vec![-1.0, 0.0]];
        let c = dbscan(&pts, &ClusterParams { eps: 0.5, min_pts: 1 }).unwrap();
        assert_eq!(c.labels(), &[Label::Cluster(0), Label::Cluster(1)]);
    }

    #[test]
    fn border_tie_rule_explicit() {
        let ang = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        // two dense groups around ±50°, a lone point at 0° within eps of both
        // group edges, the groups themselves far apart
        let a: Vec<_> = (0..7).map(|k| ang(50.0 + 0.5 * k as f64)).collect();
        let b: Vec<_> = (0..7).map(|k| ang(-50.0 - 0.5 * k as f64)).collect();
        let params = ClusterParams { eps: 0.36, min_pts: 5 };

        let mut pts = a.clone();
        pts.extend(b.clone());
        pts.push(ang(0.0));
        let c = dbscan(&pts, &params).unwrap();
        assert_eq!(c.cluster_count(), 2);
        assert!(!c.is_core(14));
        assert_eq!(c.labels()[14], c.labels()[0]);

        let mut swapped = b;
        swapped.extend(a);
        swapped.push(ang(0.0));
        let c = dbscan(&swapped, &params).unwrap();
        assert_eq!(c.labels()[14], c.labels()[0]);
        assert_ne!(c.labels()[14], c.labels()[7]);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(dbscan(&empty, &ClusterParams::default()), Err(Error::EmptyInput(_))));
        assert!(dbscan(&[vec![0.0f64, 0.0]], &ClusterParams::default()).is_err());
        assert!(dbscan(&[vec![1.0f64]], &ClusterParams { eps: 2.5, min_pts: 1 }).is_err());
        assert!(dbscan(&[vec![1.0f64]], &ClusterParams { eps: 0.5, min_pts: 0 }).is_err());
        assert!(dbscan(&[vec![1.0f64], vec![1.0, 0.0]], &ClusterParams::default()).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let pts: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.7).cos(), (i as f64 * 1.3).sin(), 0.2]).collect();
        let p = ClusterParams { eps: 0.05, min_pts: 3 };
        assert_eq!(dbscan_with(&pts, &p, true).unwrap(), dbscan(&pts, &p).unwrap());
    }
}
