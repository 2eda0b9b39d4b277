//! Synthetic reference shapes sampled uniformly by surface area.
//!
//! Each shape is a parametric surface over `[0,1]^2`. Uniform area sampling
//! uses rejection against the numerically evaluated area element.

use std::f64::consts::{PI, TAU};

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{normalize_unit_cube, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere,
    Ellipsoid { a: f64, b: f64, c: f64 },
    Torus { major: f64, minor: f64 },
    /// `z = amp * sin(fx * pi * x) * cos(fy * pi * y)` over `[-1,1]^2`.
    HeightField { amp: f64, fx: f64, fy: f64 },
    /// Sphere with radius modulated by `1 + amp * sin(freq*theta) * sin(freq*phi)`.
    BumpySphere { amp: f64, freq: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Ellipsoid { .. } => "ellipsoid",
            Shape::Torus { .. } => "torus",
            Shape::HeightField { .. } => "heightfield",
            Shape::BumpySphere { .. } => "bumpy",
        }
    }

    /// The `i`-th shape family with randomized proportions.
    pub fn random_of_family(family: usize, rng: &mut impl Rng) -> Shape {
        match family % 5 {
            0 => Shape::Ellipsoid {
                a: 1.0,
                b: rng.random_range(0.5..1.0),
                c: rng.random_range(0.35..0.9),
            },
            1 => Shape::Torus {
                major: 1.0,
                minor: rng.random_range(0.25..0.45),
            },
            2 => Shape::HeightField {
                amp: rng.random_range(0.15..0.35),
                fx: rng.random_range(0.5..1.2),
                fy: rng.random_range(0.5..1.2),
            },
            3 => Shape::BumpySphere {
                amp: rng.random_range(0.05..0.15),
                freq: rng.random_range(2.0f64..4.0).round(),
            },
            _ => Shape::Sphere,
        }
    }

    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        match *self {
            Shape::Sphere => sphere_point(u, v),
            Shape::Ellipsoid { a, b, c } => {
                let s = sphere_point(u, v);
                Vec3::new(a * s.x, b * s.y, c * s.z)
            }
            Shape::Torus { major, minor } => {
                let (th, ph) = (TAU * u, TAU * v);
                let ring = major + minor * ph.cos();
                Vec3::new(ring * th.cos(), ring * th.sin(), minor * ph.sin())
            }
            Shape::HeightField { amp, fx, fy } => {
                let (x, y) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                Vec3::new(x, y, amp * (fx * PI * x).sin() * (fy * PI * y).cos())
            }
            Shape::BumpySphere { amp, freq } => {
                let th = TAU * u;
                let ph = (1.0 - 2.0 * v).clamp(-1.0, 1.0).acos();
                let rho = 1.0 + amp * (freq * th).sin() * (freq * ph).sin();
                sphere_point(u, v) * rho
            }
        }
    }

    /// Unnormalized surface normal and area element at `(u, v)` by central differences.
    fn frame(&self, u: f64, v: f64) -> (Vec3, f64) {
        const H: f64 = 1e-6;
        let (u0, u1) = ((u - H).max(0.0), (u + H).min(1.0));
        let (v0, v1) = ((v - H).max(0.0), (v + H).min(1.0));
        let du = (self.point(u1, v) - self.point(u0, v)) / (u1 - u0);
        let dv = (self.point(u, v1) - self.point(u, v0)) / (v1 - v0);
        let n = du.cross(&dv);
        let area = n.norm();
        (n, area)
    }
}

fn sphere_point(u: f64, v: f64) -> Vec3 {
    let th = TAU * u;
    let z = 1.0 - 2.0 * v;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * th.cos(), r * th.sin(), z)
}

fn max_area_element(shape: &Shape) -> f64 {
    const GRID: usize = 64;
    let mut max = 0.0f64;
    for i in 0..=GRID {
        for j in 0..=GRID {
            let (_, a) = shape.frame(i as f64 / GRID as f64, j as f64 / GRID as f64);
            max = max.max(a);
        }
    }
    max * 1.25
}

/// Samples `n` points uniformly over the surface, with analytic-direction normals.
pub fn sample_surface(shape: &Shape, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = max_area_element(shape);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    while points.len() < n {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let (normal, area) = shape.frame(u, v);
        if rng.random::<f64>() * bound < area && area > 0.0 {
            points.push(shape.point(u, v));
            normals.push(normal / area);
        }
    }
    PointCloud::with_normals(points, normals).expect("normals are unit length by construction")
}

/// A named, unit-cube-normalized synthetic reference cloud.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub id: String,
    pub shape: Shape,
    pub cloud: PointCloud,
}

/// `count` randomly rotated shapes cycling through all families, normalized to
/// the unit cube, without normals (as a scanned reference would be).
pub fn synthetic_sources(count: usize, points: usize, seed: u64) -> Result<Vec<SyntheticSource>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shape = Shape::random_of_family(i, &mut rng);
            let rot = Rotation3::from_euler_angles(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            let sample_seed = rng.random::<u64>();
            let raw = sample_surface(&shape, points, sample_seed);
            let rotated = raw.transformed(|p| rot * p, |n| rot * n).without_normals();
            let (cloud, _) = normalize_unit_cube(&rotated)?;
            Ok(SyntheticSource {
                id: format!("synth{:03}_{}", i, shape.name()),
                shape,
                cloud,
            })
        })
        .collect()
}
