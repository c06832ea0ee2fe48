use nalgebra::{Matrix3, Vector2, Vector3};

/// Points closer than this along the optical axis are not visible.
pub const NEAR_PLANE: f64 = 1e-4;

/// Pinhole camera, OpenCV convention: +z forward, +x right, +y down.
///
/// Pixel `(i, j)` covers the continuous square `[i, i+1) x [j, j+1)`; rays are
/// cast through pixel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` only fixes the roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // rows are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive, got {} {}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be non-zero".into());
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(format!("rotation is not orthonormal (error {err:e})"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Projects a world point; `None` when behind the near plane or outside the image.
    pub fn project_point(&self, point: &Vector3<f64>) -> Option<Projection> {
        let pc = self.to_camera(point);
        if pc.z <= NEAR_PLANE {
            return None;
        }
        let u = self.fx * pc.x / pc.z + self.cx;
        let v = self.fy * pc.y / pc.z + self.cy;
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return None;
        }
        Some(Projection {
            pixel: Vector2::new(u, v),
            depth: pc.z,
        })
    }

    /// Projects without the image-bounds check.
    pub fn project_unbounded(&self, point: &Vector3<f64>) -> Option<Vector2<f64>> {
        let pc = self.to_camera(point);
        if pc.z <= NEAR_PLANE {
            return None;
        }
        Some(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Camera-space point at continuous pixel `pixel` whose z equals `depth`.
    pub fn back_project_camera(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        self.to_world(&self.back_project_camera(pixel, depth))
    }

    /// Unit camera-space ray direction through the center of pixel `(x, y)`.
    pub fn pixel_ray_camera(&self, x: usize, y: usize) -> Vector3<f64> {
        Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Unit world-space ray direction through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vector3<f64> {
        self.rotation.transpose() * self.pixel_ray_camera(x, y)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
