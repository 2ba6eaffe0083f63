use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vec3::{Aabb, Vec3};
use crate::{Error, Result};

/// Headlight shading constants: `ambient + diffuse * max(0, n·(-dir))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            ambient: 0.25,
            diffuse: 0.75,
        }
    }
}

impl Light {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.ambient)
            && (0.0..=1.0).contains(&self.diffuse)
            && self.ambient + self.diffuse <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid light constants {self:?}")))
        }
    }

    /// Shading factor for a surface with unit normal `n` hit by a ray with unit direction `dir`.
    pub fn shade(&self, n: Vec3, dir: Vec3) -> f64 {
        self.ambient + self.diffuse * n.dot(-dir).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    Box { half_extents: Vec3, yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveRole {
    Tile,
    Base,
    Occluder,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub id: u32,
    #[serde(flatten)]
    pub kind: PrimitiveKind,
    pub center: Vec3,
    pub albedo: Vec3,
    pub role: PrimitiveRole,
}

impl Primitive {
    pub fn sphere(id: u32, center: Vec3, radius: f64, albedo: Vec3) -> Self {
        Self {
            id,
            kind: PrimitiveKind::Sphere { radius },
            center,
            albedo,
            role: PrimitiveRole::Other,
        }
    }

    pub fn cuboid(id: u32, center: Vec3, half_extents: Vec3, yaw: f64, albedo: Vec3) -> Self {
        Self {
            id,
            kind: PrimitiveKind::Box { half_extents, yaw },
            center,
            albedo,
            role: PrimitiveRole::Other,
        }
    }

    pub fn with_role(mut self, role: PrimitiveRole) -> Self {
        self.role = role;
        self
    }

    pub fn is_box(&self) -> bool {
        matches!(self.kind, PrimitiveKind::Box { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let geometry_ok = match self.kind {
            PrimitiveKind::Sphere { radius } => radius > 0.0 && radius.is_finite(),
            PrimitiveKind::Box { half_extents, yaw } => {
                half_extents.x > 0.0
                    && half_extents.y > 0.0
                    && half_extents.z > 0.0
                    && half_extents.is_finite()
                    && yaw.is_finite()
            }
        };
        let albedo_ok = (0..3).all(|i| (0.0..=1.0).contains(&self.albedo[i]));
        if geometry_ok && albedo_ok && self.center.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid primitive {}", self.id)))
        }
    }

    /// World-space bounding box.
    pub fn aabb(&self) -> Aabb {
        let half = match self.kind {
            PrimitiveKind::Sphere { radius } => Vec3::splat(radius),
            PrimitiveKind::Box { half_extents: h, yaw } => {
                let (s, c) = yaw.sin_cos();
                Vec3::new(
                    c.abs() * h.x + s.abs() * h.y,
                    s.abs() * h.x + c.abs() * h.y,
                    h.z,
                )
            }
        };
        Aabb::new(self.center - half, self.center + half)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match self.kind {
            PrimitiveKind::Sphere { radius } => p.distance(self.center) < radius,
            PrimitiveKind::Box { half_extents: h, yaw } => {
                let l = to_local(p - self.center, yaw);
                l.x.abs() < h.x && l.y.abs() < h.y && l.z.abs() < h.z
            }
        }
    }

    /// Nearest intersection in front of the ray origin: (distance, outward unit normal).
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        match self.kind {
            PrimitiveKind::Sphere { radius } => {
                let oc = origin - self.center;
                let b = oc.dot(dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > 0.0 { -b - sq } else { -b + sq };
                if t <= 0.0 {
                    return None;
                }
                let n = (origin + dir * t - self.center) / radius;
                Some((t, n))
            }
            PrimitiveKind::Box { half_extents: h, yaw } => {
                let o = to_local(origin - self.center, yaw);
                let d = to_local(dir, yaw);
                let local = Aabb::new(-h, h);
                let (t0, t1) = local.intersect(o, d)?;
                let t = if t0 > 0.0 { t0 } else { t1 };
                if t <= 0.0 {
                    return None;
                }
                let p = o + d * t;
                // face normal: axis whose coordinate sits closest to its slab
                let mut axis = 0;
                let mut best = f64::INFINITY;
                for i in 0..3 {
                    let gap = (p[i].abs() - h[i]).abs() / h[i];
                    if gap < best {
                        best = gap;
                        axis = i;
                    }
                }
                let mut n = [0.0; 3];
                n[axis] = p[axis].signum();
                Some((t, to_world(Vec3::from(n), yaw)))
            }
        }
    }
}

fn to_local(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

fn to_world(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Ground-truth scene: analytic primitives, region-of-interest ids, bounds and light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub primitives: Vec<Primitive>,
    pub roi_ids: BTreeSet<u32>,
    pub bounds: Aabb,
    pub light: Light,
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        self.light.validate()?;
        let mut ids = BTreeSet::new();
        for p in &self.primitives {
            p.validate()?;
            if !ids.insert(p.id) {
                return Err(Error::Config(format!("duplicate primitive id {}", p.id)));
            }
            if !self.bounds.contains_box(&p.aabb()) {
                return Err(Error::Config(format!("primitive {} outside scene bounds", p.id)));
            }
        }
        if self.roi_ids.is_empty() {
            return Err(Error::Config("scene has no ROI primitive".into()));
        }
        if let Some(bad) = self.roi_ids.iter().find(|id| !ids.contains(id)) {
            return Err(Error::Config(format!("ROI id {bad} is not a primitive")));
        }
        Ok(())
    }

    pub fn primitive(&self, id: u32) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.id == id)
    }

    /// Mean of ROI primitive centers.
    pub fn roi_centroid(&self) -> Vec3 {
        let (sum, n) = self
            .primitives
            .iter()
            .filter(|p| self.roi_ids.contains(&p.id))
            .fold((Vec3::ZERO, 0usize), |(s, n), p| (s + p.center, n + 1));
        sum / n.max(1) as f64
    }

    /// Nearest primitive hit along the ray: (distance, normal, primitive index).
    pub fn trace(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3, usize)> {
        let mut best: Option<(f64, Vec3, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = p.intersect(origin, dir) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, n, i));
                }
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: SceneModel = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Parameters of the procedural tile-array scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// Half extents of one tile (m).
    pub tile_half_extents: Vec3,
    /// Center-to-center tile spacing (m).
    pub tile_spacing: f64,
    /// Maximum absolute yaw of a tile (rad).
    pub max_tilt: f64,
    pub roi_tiles: usize,
    /// Pillars and spheres scattered around the array.
    pub occluders: usize,
    pub occluder_height: (f64, f64),
    pub base_plate: bool,
    pub margin: f64,
    pub light: Light,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            tile_rows: 3,
            tile_cols: 3,
            tile_half_extents: Vec3::new(0.11, 0.11, 0.03),
            tile_spacing: 0.28,
            max_tilt: 0.15,
            roi_tiles: 2,
            occluders: 4,
            occluder_height: (0.2, 0.4),
            base_plate: true,
            margin: 0.02,
            light: Light::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let h = self.tile_half_extents;
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(Error::Config("tile grid must have at least one row and column".into()));
        }
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || self.tile_spacing <= 0.0 {
            return Err(Error::Config("tile sizes and spacing must be positive".into()));
        }
        if self.roi_tiles == 0 || self.roi_tiles > self.tile_rows * self.tile_cols {
            return Err(Error::Config(format!(
                "roi_tiles must be in 1..={}, got {}",
                self.tile_rows * self.tile_cols,
                self.roi_tiles
            )));
        }
        let (lo, hi) = self.occluder_height;
        if self.occluders > 0 && !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("occluder heights must be positive".into()));
        }
        if self.margin < 0.0 || self.max_tilt < 0.0 {
            return Err(Error::Config("margin and tilt must be non-negative".into()));
        }
        self.light.validate()
    }
}

/// Builds the tile-array scene. Identical `(seed, config)` gives a bit-identical scene.
pub fn build_scene(seed: u64, config: &SceneConfig) -> Result<SceneModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::new();
    let mut next_id = 0u32;
    let mut id = || {
        next_id += 1;
        next_id
    };

    let h = config.tile_half_extents;
    let x0 = -(config.tile_cols as f64 - 1.0) * 0.5 * config.tile_spacing;
    let y0 = -(config.tile_rows as f64 - 1.0) * 0.5 * config.tile_spacing;
    let mut tiles = Vec::new();
    for r in 0..config.tile_rows {
        for c in 0..config.tile_cols {
            let center = Vec3::new(
                x0 + c as f64 * config.tile_spacing,
                y0 + r as f64 * config.tile_spacing,
                h.z,
            );
            let yaw = if config.max_tilt > 0.0 {
                rng.gen_range(-config.max_tilt..=config.max_tilt)
            } else {
                0.0
            };
            let grey = rng.gen_range(0.45..0.8);
            let albedo = Vec3::new(
                grey * rng.gen_range(0.85..1.0),
                grey * rng.gen_range(0.85..1.0),
                grey * rng.gen_range(0.85..1.0),
            );
            let p = Primitive::cuboid(id(), center, h, yaw, albedo).with_role(PrimitiveRole::Tile);
            tiles.push(p.id);
            primitives.push(p);
        }
    }

    // ROI: a seed tile and its nearest neighbours, so the region is spatially coherent
    let anchor = rng.gen_range(0..tiles.len());
    let anchor_c = primitives[anchor].center;
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by(|&a, &b| {
        let da = primitives[a].center.distance(anchor_c);
        let db = primitives[b].center.distance(anchor_c);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let roi_ids: BTreeSet<u32> = order[..config.roi_tiles].iter().map(|&i| tiles[i]).collect();
    for p in primitives.iter_mut() {
        if roi_ids.contains(&p.id) {
            // warm tint so ROI tiles read as the inspected material
            p.albedo = Vec3::new(
                (p.albedo.x * 1.25).min(1.0),
                p.albedo.y * 0.85,
                p.albedo.z * 0.55,
            );
        }
    }

    let half_w = (config.tile_cols as f64 - 1.0) * 0.5 * config.tile_spacing + h.x.max(h.y) * 1.5;
    let half_d = (config.tile_rows as f64 - 1.0) * 0.5 * config.tile_spacing + h.x.max(h.y) * 1.5;
    let ring = half_w.max(half_d);
    for k in 0..config.occluders {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let radial = ring * rng.gen_range(0.85..1.1);
        let height = rng.gen_range(config.occluder_height.0..=config.occluder_height.1);
        let albedo = Vec3::new(
            rng.gen_range(0.2..0.5),
            rng.gen_range(0.3..0.6),
            rng.gen_range(0.4..0.7),
        );
        let (s, c) = angle.sin_cos();
        let p = if k % 2 == 0 {
            let half = Vec3::new(0.04, 0.04, height * 0.5);
            Primitive::cuboid(id(), Vec3::new(radial * c, radial * s, height * 0.5), half, angle, albedo)
        } else {
            let radius = height * 0.3;
            Primitive::sphere(id(), Vec3::new(radial * c, radial * s, radius), radius, albedo)
        };
        primitives.push(p.with_role(PrimitiveRole::Occluder));
    }

    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for p in &primitives {
        let b = p.aabb();
        lo = lo.min_elem(b.min);
        hi = hi.max_elem(b.max);
    }
    if config.base_plate {
        let thickness = 0.02;
        let half = Vec3::new(
            (hi.x - lo.x) * 0.5 + 0.03,
            (hi.y - lo.y) * 0.5 + 0.03,
            thickness * 0.5,
        );
        let center = Vec3::new((hi.x + lo.x) * 0.5, (hi.y + lo.y) * 0.5, -thickness * 0.5);
        let p = Primitive::cuboid(id(), center, half, 0.0, Vec3::new(0.35, 0.35, 0.38))
            .with_role(PrimitiveRole::Base);
        let b = p.aabb();
        lo = lo.min_elem(b.min);
        hi = hi.max_elem(b.max);
        primitives.push(p);
    }

    let m = Vec3::splat(config.margin);
    let scene = SceneModel {
        primitives,
        roi_ids,
        bounds: Aabb::new(lo - m, hi + m),
        light: config.light,
    };
    scene.validate()?;
    Ok(scene)
}
