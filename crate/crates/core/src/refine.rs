//! Foreground point extraction and misdetected-view filtering.
//!
//! Both scores average mask probabilities sampled bilinearly at point
//! projections. Visibility is positive depth plus image bounds; there is no
//! occlusion test. `None` marks a point or view with no visible sample.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::scene::{PointCloud, View};
use crate::{Error, Result};

/// Minimum number of views that must survive filtering.
pub const K_MIN: usize = 8;
pub const DEFAULT_TAU_POINT: f64 = 0.5;
pub const DEFAULT_TAU_VIEW: f64 = 0.6;

fn mean_probability(samples: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = samples.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn sample(view: &View, p: &nalgebra::Vector3<f64>) -> Option<f64> {
    let proj = view.camera.project_point(p)?;
    Some(view.prob_mask.sample_bilinear(proj.pixel.x, proj.pixel.y, 0))
}

/// Mean mask probability of each point over the views that see it.
pub fn point_confidence(cloud: &PointCloud, views: &[View]) -> Vec<Option<f64>> {
    cloud
        .points
        .par_iter()
        .map(|p| mean_probability(views.iter().filter_map(|v| sample(v, p))))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub cloud: PointCloud,
    /// Per input point.
    pub kept: Vec<bool>,
    /// Set when nothing survived.
    pub empty_warning: bool,
}

/// Keeps scored points with confidence at least `tau_point`, in input order.
pub fn extract_foreground(cloud: &PointCloud, scores: &[Option<f64>], tau_point: f64) -> Extraction {
    let kept: Vec<bool> = scores.iter().map(|s| s.is_some_and(|s| s >= tau_point)).collect();
    let cloud = cloud.select(|i| kept[i]);
    Extraction {
        empty_warning: cloud.is_empty(),
        cloud,
        kept,
    }
}

/// Mean mask probability at the projections of the visible foreground points.
pub fn view_confidence(foreground: &PointCloud, view: &View) -> Option<f64> {
    mean_probability(foreground.points.iter().filter_map(|p| sample(view, p)))
}

/// Sets `valid` on each view from its score; fails when fewer than [`K_MIN`] remain.
pub fn filter_views(views: &mut [View], scores: &[Option<f64>], tau_view: f64) -> Result<usize> {
    let mut valid = 0;
    for (v, s) in views.iter_mut().zip(scores) {
        v.valid = s.is_some_and(|s| s >= tau_view);
        valid += v.valid as usize;
    }
    if valid < K_MIN {
        return Err(Error::Config(format!(
            "only {valid} views reach view confidence {tau_view}, at least {K_MIN} are required; lower tau_view"
        )));
    }
    Ok(valid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceReport {
    pub point_scores: Vec<Option<f64>>,
    pub point_kept: Vec<bool>,
    /// Indices of the scored views within the dataset.
    pub view_indices: Vec<usize>,
    pub view_scores: Vec<Option<f64>>,
    pub view_valid: Vec<bool>,
    pub tau_point: f64,
    pub tau_view: f64,
}

impl ConfidenceReport {
    /// `kind,index,score,flag` rows; unscored entries are written as `unscored`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# tau_point = {}\n# tau_view = {}\nkind,index,score,flag\n", self.tau_point, self.tau_view);
        let score = |v: &Option<f64>| v.map_or("unscored".to_string(), |x| format!("{x:.6}"));
        for (i, (sc, k)) in self.point_scores.iter().zip(&self.point_kept).enumerate() {
            let _ = writeln!(s, "point,{i},{},{}", score(sc), *k as u8);
        }
        for ((i, sc), v) in self.view_indices.iter().zip(&self.view_scores).zip(&self.view_valid) {
            let _ = writeln!(s, "view,{i},{},{}", score(sc), *v as u8);
        }
        s
    }
}

/// Runs both refinement stages over `views[indices]`, updating their valid flags.
pub fn refine_views(
    cloud: &PointCloud,
    views: &mut [View],
    indices: &[usize],
    tau_point: f64,
    tau_view: f64,
) -> Result<(PointCloud, ConfidenceReport)> {
    let subset: Vec<View> = indices.iter().map(|&i| views[i].clone()).collect();
    let point_scores = point_confidence(cloud, &subset);
    let ex = extract_foreground(cloud, &point_scores, tau_point);
    if ex.empty_warning {
        return Err(Error::Data(format!("no point reaches confidence {tau_point}; lower tau_point")));
    }
    let view_scores: Vec<Option<f64>> = subset.par_iter().map(|v| view_confidence(&ex.cloud, v)).collect();
    let mut scored = subset;
    filter_views(&mut scored, &view_scores, tau_view)?;
    for (&i, v) in indices.iter().zip(&scored) {
        views[i].valid = v.valid;
    }
    let report = ConfidenceReport {
        point_scores,
        point_kept: ex.kept,
        view_indices: indices.to_vec(),
        view_scores,
        view_valid: scored.iter().map(|v| v.valid).collect(),
        tau_point,
        tau_view,
    };
    Ok((ex.cloud, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, ImageBuffer};
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn view_with(mask: ImageBuffer, tz: f64) -> View {
        let (w, h) = (mask.width, mask.height);
        let cam = Camera {
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, tz),
        };
        View::new(ImageBuffer::new(w, h, 3), mask, cam).unwrap()
    }

    #[test]
    fn two_views_average() {
        let views = [view_with(ImageBuffer::filled(8, 8, 1, 0.8), 3.0), view_with(ImageBuffer::filled(8, 8, 1, 0.6), 4.0)];
        let cloud = PointCloud::new(vec![Vector3::zeros()]);
        let s = point_confidence(&cloud, &views);
        assert!((s[0].unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn point_behind_all_cameras_is_unscored() {
        let views = [view_with(ImageBuffer::filled(8, 8, 1, 1.0), 3.0)];
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, -5.0)]);
        assert_eq!(point_confidence(&cloud, &views), vec![None]);
        let ex = extract_foreground(&cloud, &[None], 0.0);
        assert!(ex.empty_warning && ex.cloud.is_empty());
    }

    #[test]
    fn extraction_thresholds() {
        let cloud = PointCloud::new((0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        let all = extract_foreground(&cloud, &[Some(1.0); 4], 0.5);
        assert_eq!(all.cloud, cloud);
        assert!(!all.empty_warning);
        let none = extract_foreground(&cloud, &[Some(0.0); 4], 0.5);
        assert!(none.cloud.is_empty() && none.empty_warning);
    }

    #[test]
    fn view_confidence_constant_masks() {
        let fg = PointCloud::new(vec![Vector3::zeros(), Vector3::new(0.1, 0.1, 0.0)]);
        assert_eq!(view_confidence(&fg, &view_with(ImageBuffer::filled(8, 8, 1, 1.0), 3.0)), Some(1.0));
        assert_eq!(view_confidence(&fg, &view_with(ImageBuffer::new(8, 8, 1), 3.0)), Some(0.0));
        assert_eq!(view_confidence(&PointCloud::new(vec![]), &view_with(ImageBuffer::new(8, 8, 1), 3.0)), None);
    }

    #[test]
    fn filter_views_requires_minimum() {
        let mut views: Vec<View> = (0..10).map(|_| view_with(ImageBuffer::new(4, 4, 1), 3.0)).collect();
        assert_eq!(filter_views(&mut views, &[Some(0.9); 10], 0.6).unwrap(), 10);
        assert!(views.iter().all(|v| v.valid));
        let r = filter_views(&mut views, &[Some(0.1); 10], 0.6);
        assert!(matches!(r, Err(Error::Config(_))));
        let mut scores = vec![Some(0.9); 10];
        scores[3] = None;
        scores[5] = Some(0.59);
        assert_eq!(filter_views(&mut views, &scores, 0.6).unwrap(), 8);
        assert!(!views[3].valid && !views[5].valid);
    }

    #[test]
    fn csv_rows() {
        let r = ConfidenceReport {
            point_scores: vec![Some(0.25), None],
            point_kept: vec![false, false],
            view_indices: vec![4],
            view_scores: vec![Some(1.0)],
            view_valid: vec![true],
            tau_point: 0.5,
            tau_view: 0.6,
        };
        let csv = r.to_csv();
        assert!(csv.contains("point,0,0.250000,0\npoint,1,unscored,0\nview,4,1.000000,1\n"));
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent_and_monotone(scores in prop::collection::vec(prop::option::of(0.0f64..1.0), 0..40), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let cloud = PointCloud::new((0..scores.len()).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = extract_foreground(&cloud, &scores, lo);
            let kept_scores: Vec<Option<f64>> = scores.iter().zip(&a.kept).filter(|(_, &k)| k).map(|(s, _)| *s).collect();
            let again = extract_foreground(&a.cloud, &kept_scores, lo);
            prop_assert_eq!(&again.cloud, &a.cloud);
            let b = extract_foreground(&cloud, &scores, hi);
            prop_assert!(b.cloud.len() <= a.cloud.len());
            prop_assert!(b.kept.iter().zip(&a.kept).all(|(&hb, &ha)| !hb || ha));
        }

        #[test]
        fn view_order_does_not_change_point_scores(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let views: Vec<View> = (0..4)
                .map(|i| view_with(ImageBuffer::from_fn(6, 6, 1, |_, _, _| rng.random()), 3.0 + i as f64))
                .collect();
            let cloud = PointCloud::new((0..5).map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0)).collect());
            let a = point_confidence(&cloud, &views);
            let rev: Vec<View> = views.iter().rev().cloned().collect();
            let b = point_confidence(&cloud, &rev);
            for (x, y) in a.iter().zip(&b) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    _ => prop_assert_eq!(x, y),
                }
            }
        }
    }
}
