use nalgebra::{Vector2, Vector3};

use crate::scene::{Camera, ImageBuffer};

/// Per-pixel vectors, row-major. Unlike [`ImageBuffer`] entries may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vector3<f64>>,
}

impl NormalMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Vector3::zeros(); width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    /// Maps components from [-1, 1] to [0, 1] for display.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, 3, |x, y, c| 0.5 * (self.get(x, y)[c] + 1.0))
    }
}

/// Surface normals from finite differences of the back-projected depth map.
///
/// Pixels are back-projected to camera space, spatial derivatives use central
/// differences (one-sided where a neighbor is missing or at the border), and
/// the cross product of the two derivatives is oriented towards the camera.
/// The result is expressed in world coordinates. Pixels without depth, or
/// whose cross product vanishes, get the zero vector.
pub fn depth_to_normal(depth: &ImageBuffer, camera: &Camera) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = NormalMap::zeros(w, h);
    let points: Vec<Option<Vector3<f64>>> = (0..w * h)
        .map(|k| {
            let d = depth.data[k];
            (d > 0.0).then(|| {
                let px = Vector2::new((k % w) as f64 + 0.5, (k / w) as f64 + 0.5);
                camera.back_project_camera(&px, d)
            })
        })
        .collect();
    let at = |x: isize, y: isize| -> Option<Vector3<f64>> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            None
        } else {
            points[y as usize * w + x as usize]
        }
    };
    let diff = |prev: Option<Vector3<f64>>, here: Vector3<f64>, next: Option<Vector3<f64>>| match (prev, next) {
        (Some(a), Some(b)) => Some((b - a) * 0.5),
        (None, Some(b)) => Some(b - here),
        (Some(a), None) => Some(here - a),
        (None, None) => None,
    };
    let rt = camera.rotation.transpose();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let Some(p) = at(x, y) else { continue };
            let (Some(dx), Some(dy)) = (diff(at(x - 1, y), p, at(x + 1, y)), diff(at(x, y - 1), p, at(x, y + 1))) else {
                continue;
            };
            // x right, y down, z forward: dx × dy points away from the camera
            let n = -dx.cross(&dy);
            let len = n.norm();
            if len < 1e-12 {
                continue;
            }
            out.data[y as usize * w + x as usize] = rt * (n / len);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn cam() -> Camera {
        Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let d = ImageBuffer::filled(32, 32, 1, 3.0);
        let n = depth_to_normal(&d, &cam());
        for y in 1..31 {
            for x in 1..31 {
                assert!((n.get(x, y) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn no_depth_gives_zero_normals() {
        let n = depth_to_normal(&ImageBuffer::new(32, 32, 1), &cam());
        assert!(n.data.iter().all(|v| *v == Vector3::zeros()));
    }

    /// Plane z = 3 + y (slanted 45 degrees) intersected with the camera rays,
    /// depth solved per pixel analytically.
    #[test]
    fn slanted_plane_matches_analytic_normal() {
        let c = cam();
        let (z0, slope) = (3.0, 1.0);
        let d = ImageBuffer::from_fn(32, 32, 1, |_, y, _| {
            // point on ray: (.., (v - cy)/fy * z, z); plane z = z0 + slope * Y
            let ry = (y as f64 + 0.5 - c.cy) / c.fy;
            z0 / (1.0 - slope * ry)
        });
        let n = depth_to_normal(&d, &c);
        // plane z - slope*y = z0 has normal (0, -slope, 1); towards the camera is (0, slope, -1)
        let expected = Vector3::new(0.0, slope, -1.0).normalize();
        for y in 1..31 {
            for x in 1..31 {
                assert!((n.get(x, y) - expected).norm() < 1e-3, "{:?}", n.get(x, y));
            }
        }
    }
}
