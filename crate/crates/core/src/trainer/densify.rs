use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scene::{normalize_quat, quat_to_matrix, Gaussian, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyThresholds {
    /// Mean view-space gradient norm above which a Gaussian is densified.
    pub grad: f64,
    /// Below this max scale a Gaussian is cloned, otherwise split.
    pub max_scale: f64,
    pub prune_opacity: f64,
    pub prune_max_scale: f64,
    pub split_factor: f64,
    pub split_children: usize,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self { grad: 0.5, max_scale: 0.05, prune_opacity: 0.01, prune_max_scale: 0.05, split_factor: 1.6, split_children: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginKind {
    Original,
    Clone,
    Split,
}

/// Where a Gaussian of the densified cloud came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub parent: usize,
    pub kind: OriginKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    /// 1-based training step at which the event ran.
    pub step: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub before: usize,
    pub after: usize,
}

/// Thresholds are compared in the stored f32 precision, so a value written as
/// exactly the threshold is never on the wrong side of it.
pub fn should_prune(g: &Gaussian, th: &DensifyThresholds) -> bool {
    g.opacity < th.prune_opacity as f32 || g.max_scale() > th.prune_max_scale as f32
}

/// Clones or splits high-gradient Gaussians, then prunes. Statistics of the result
/// are reset. Split children are drawn from the parent's own density.
pub fn densify_and_prune<R: Rng>(
    cloud: &GaussianCloud,
    th: &DensifyThresholds,
    rng: &mut R,
) -> (GaussianCloud, Vec<Origin>, DensifyReport) {
    let mut report = DensifyReport { before: cloud.len(), ..Default::default() };
    let mut kept: Vec<(Gaussian, Origin)> = Vec::with_capacity(cloud.len());
    let mut added: Vec<(Gaussian, Origin)> = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let stat = cloud.grad_stats.get(i).map_or(0.0, |s| s.mean());
        if stat <= th.grad {
            kept.push((*g, Origin { parent: i, kind: OriginKind::Original }));
        } else if g.max_scale() < th.max_scale as f32 {
            report.cloned += 1;
            kept.push((*g, Origin { parent: i, kind: OriginKind::Original }));
            added.push((*g, Origin { parent: i, kind: OriginKind::Clone }));
        } else {
            report.split += 1;
            let rot = quat_to_matrix(&normalize_quat(&g.rotation.cast()));
            let scale: Vector3<f64> = g.scale.cast();
            for _ in 0..th.split_children {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let offset = rot * scale.component_mul(&z);
                let child = Gaussian {
                    center: (g.center.cast::<f64>() + offset).cast(),
                    scale: (scale / th.split_factor).cast(),
                    ..*g
                };
                added.push((child, Origin { parent: i, kind: OriginKind::Split }));
            }
        }
    }
    let (gaussians, origins): (Vec<_>, Vec<_>) =
        kept.into_iter().chain(added).filter(|(g, _)| !should_prune(g, th)).unzip();
    let total = cloud.len() + report.cloned + report.split * (th.split_children.saturating_sub(1));
    report.pruned = total - gaussians.len();
    report.after = gaussians.len();
    (GaussianCloud::new(gaussians), origins, report)
}
