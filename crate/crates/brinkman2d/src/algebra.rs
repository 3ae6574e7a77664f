//! Small fixed-size vector/matrix types used throughout the solver.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// 2D point / vector with f64 components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product (signed parallelogram area).
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Unit vector in the same direction; panics on zero length in debug.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        debug_assert!(n > 0.0, "cannot normalize zero vector");
        self.scale(1.0 / n)
    }

    /// Rotate by -90 degrees: for a CCW-ordered edge this points outward.
    pub fn perp_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        self.scale(s)
    }
}

/// 2x2 matrix, row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { xx: 0.0, xy: 0.0, yx: 0.0, yy: 0.0 };
    pub const IDENTITY: Mat2 = Mat2 { xx: 1.0, xy: 0.0, yx: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yx: f64, yy: f64) -> Self {
        Mat2 { xx, xy, yx, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.yx
    }

    /// Closed-form inverse via the adjugate.
    pub fn inverse(self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let inv = 1.0 / d;
        Some(Mat2::new(self.yy * inv, -self.xy * inv, -self.yx * inv, self.xx * inv))
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.yx * v.x + self.yy * v.y)
    }

    pub fn mul_mat(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.xx * o.xx + self.xy * o.yx,
            self.xx * o.xy + self.xy * o.yy,
            self.yx * o.xx + self.yy * o.yx,
            self.yx * o.xy + self.yy * o.yy,
        )
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2::new(self.xx * s, self.xy * s, self.yx * s, self.yy * s)
    }

    pub fn add_mat(self, o: Mat2) -> Mat2 {
        Mat2::new(self.xx + o.xx, self.xy + o.xy, self.yx + o.yx, self.yy + o.yy)
    }

    /// Rotation by angle `a` (radians, counterclockwise).
    pub fn rotation(a: f64) -> Mat2 {
        let (s, c) = a.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.xx, self.yx, self.xy, self.yy)
    }

    pub fn is_symmetric(self, rel_tol: f64) -> bool {
        let scale = self.xx.abs().max(self.yy.abs()).max(self.xy.abs()).max(self.yx.abs());
        (self.xy - self.yx).abs() <= rel_tol * scale.max(f64::MIN_POSITIVE)
    }

    /// Eigenvalues of a symmetric 2x2 matrix, ascending.
    pub fn sym_eigenvalues(self) -> (f64, f64) {
        let tr = self.xx + self.yy;
        let half = 0.5 * tr;
        let off = 0.5 * (self.xy + self.yx);
        let disc = (0.5 * (self.xx - self.yy)).hypot(off);
        (half - disc, half + disc)
    }

    pub fn max_abs(self) -> f64 {
        self.xx.abs().max(self.xy.abs()).max(self.yx.abs()).max(self.yy.abs())
    }
}
