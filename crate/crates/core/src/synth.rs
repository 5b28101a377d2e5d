//! Synthetic camera networks watching people walk around, rendered into
//! the same inputs a real deployment would provide.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{Rotation3, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{BBox, Tracklet};
use crate::geometry::{project, CameraId, CameraIntrinsics, Pose};
use crate::metrics::AnnotatedPair;
use crate::pipeline::SegmentPrior;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(&'static str),
    #[error("could not place {wanted} annotated points for cameras {cam_a} and {cam_b}")]
    NoCommonView { cam_a: CameraId, cam_b: CameraId, wanted: usize },
}

/// Scene description. Lengths are meters, image quantities pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_cameras: usize,
    /// Walkable area `[0, x] × [0, y]` on the ground plane.
    pub extent: [f64; 2],
    /// Camera heights are drawn from this range.
    pub camera_height: [f64; 2],
    pub n_people: usize,
    pub n_frames: u32,
    pub fps: f64,
    pub walk_speed: f64,
    /// Gaussian noise on every box center.
    pub pixel_noise_sigma: f64,
    /// Radius of the disc the per-person, per-camera box center offset is
    /// drawn from.
    pub center_offset_radius: f64,
    pub body_height: f64,
    /// Standard deviation of individual heights around `body_height`.
    pub height_spread: f64,
    /// Height of the body mass as a fraction of the body height.
    pub body_mass_fraction: f64,
    pub image_size: [u32; 2],
    pub focal: f64,
    pub distortion: [f64; 5],
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    /// Fraction of people whose appearance is exchanged with someone else
    /// in every camera but camera 0, so that association gets them wrong.
    pub wrong_association_fraction: f64,
    pub annotated_pairs: usize,
    /// Frame spacing of the candidate scale-prior segments.
    pub prior_stride: u32,
    /// How many body segments of known length are annotated per camera
    /// pair, spread over people and time. `None` emits every candidate.
    pub priors_per_pair: Option<usize>,
    /// Gaussian noise on the prior endpoints, which stand for hand
    /// annotations and are exact by default.
    pub prior_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_cameras: 4,
            extent: [20.0, 25.0],
            camera_height: [2.0, 3.0],
            n_people: 10,
            n_frames: 500,
            fps: 25.0,
            walk_speed: 1.2,
            pixel_noise_sigma: 0.0,
            center_offset_radius: 0.0,
            body_height: 1.75,
            height_spread: 0.08,
            body_mass_fraction: 0.55,
            image_size: [1280, 720],
            focal: 640.0,
            distortion: [-0.05, 0.01, 0.0, 0.0, 0.0],
            embedding_dim: 32,
            embedding_noise: 0.05,
            wrong_association_fraction: 0.0,
            annotated_pairs: 15,
            prior_stride: 25,
            priors_per_pair: Some(4),
            prior_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_cameras < 1 || self.n_people < 1 || self.n_frames < 1 || self.embedding_dim < 1 {
            return Err(SynthError::InvalidSpec("counts must be at least 1"));
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return Err(SynthError::InvalidSpec("extent must be positive"));
        }
        if !(self.camera_height[0] > 0.0 && self.camera_height[0] <= self.camera_height[1]) {
            return Err(SynthError::InvalidSpec("camera height range is invalid"));
        }
        if !(self.fps > 0.0 && self.walk_speed >= 0.0 && self.body_height > 0.0 && self.focal > 0.0) {
            return Err(SynthError::InvalidSpec("rates and sizes must be positive"));
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.center_offset_radius >= 0.0 && self.height_spread >= 0.0) {
            return Err(SynthError::InvalidSpec("noise levels must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.body_mass_fraction) || !(0.0..=1.0).contains(&self.wrong_association_fraction) {
            return Err(SynthError::InvalidSpec("fractions must lie in [0, 1]"));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 || self.prior_stride == 0 {
            return Err(SynthError::InvalidSpec("image size and prior stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub id: u32,
    pub height: f64,
    /// Ground position at every frame.
    pub path: Vec<Vector2<f64>>,
}

/// World-frame ground truth. The world has `z` up and the ground at `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// World to camera.
    pub poses: BTreeMap<CameraId, Pose>,
    pub intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    pub people: Vec<Person>,
    pub body_mass_fraction: f64,
}

impl GroundTruth {
    pub fn foot(&self, person: usize, frame: u32) -> Vector3<f64> {
        let p = self.people[person].path[frame as usize];
        Vector3::new(p.x, p.y, 0.0)
    }

    pub fn head(&self, person: usize, frame: u32) -> Vector3<f64> {
        self.foot(person, frame) + Vector3::new(0.0, 0.0, self.people[person].height)
    }

    pub fn body_mass(&self, person: usize, frame: u32) -> Vector3<f64> {
        self.foot(person, frame) + Vector3::new(0.0, 0.0, self.body_mass_fraction * self.people[person].height)
    }

    /// Vertical segment from foot to head, the ground truth behind the
    /// scale priors.
    pub fn prior_segment(&self, person: usize, frame: u32) -> (Vector3<f64>, Vector3<f64>) {
        (self.foot(person, frame), self.head(person, frame))
    }

    /// Poses re-expressed against `reference`'s camera frame.
    pub fn relative_poses(&self, reference: CameraId) -> BTreeMap<CameraId, Pose> {
        let r = self.poses[&reference];
        self.poses.iter().map(|(id, p)| (*id, p.relative_to(&r))).collect()
    }

    /// World point expressed in `reference`'s camera frame.
    pub fn to_reference(&self, reference: CameraId, x: &Vector3<f64>) -> Vector3<f64> {
        self.poses[&reference].transform(x)
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Camera at `center` looking at `target`, image `y` pointing down.
fn look_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64) -> Pose {
    let z = (target - center).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x);
    let r = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), roll) * r;
    Pose::from_parts(r, -(r * center), true)
}

fn perimeter_point(extent: [f64; 2], s: f64) -> Vector2<f64> {
    let [w, h] = extent;
    let p = 2.0 * (w + h);
    let s = s - p * (s / p).floor();
    if s < w {
        Vector2::new(s, 0.0)
    } else if s < w + h {
        Vector2::new(w, s - w)
    } else if s < 2.0 * w + h {
        Vector2::new(w - (s - w - h), h)
    } else {
        Vector2::new(0.0, h - (s - 2.0 * w - h))
    }
}

/// Places cameras around the perimeter looking inward, and lets people
/// walk smooth random paths that stay inside the extent.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let [w, h] = spec.extent;
    let mid = Vector2::new(0.5 * w, 0.5 * h);

    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 1));
    let perimeter = 2.0 * (w + h);
    let spacing = perimeter / spec.n_cameras as f64;
    let mut poses = BTreeMap::new();
    let mut intrinsics = BTreeMap::new();
    for c in 0..spec.n_cameras {
        let s = c as f64 * spacing + uniform(&mut rng, -0.05, 0.05) * spacing;
        let on_edge = perimeter_point(spec.extent, s);
        let out = (on_edge - mid).normalize();
        let ground = on_edge + out;
        let center = Vector3::new(ground.x, ground.y, uniform(&mut rng, spec.camera_height[0], spec.camera_height[1]));
        let target = Vector3::new(
            mid.x + uniform(&mut rng, -2.0, 2.0),
            mid.y + uniform(&mut rng, -2.0, 2.0),
            uniform(&mut rng, 0.8, 1.2),
        );
        let roll = uniform(&mut rng, -2.0, 2.0).to_radians();
        poses.insert(c as CameraId, look_at(center, target, roll));

        let [iw, ih] = spec.image_size;
        let fx = spec.focal * (1.0 + uniform(&mut rng, -0.02, 0.02));
        let fy = fx * (1.0 + uniform(&mut rng, -0.002, 0.002));
        let cx = 0.5 * iw as f64 + uniform(&mut rng, -5.0, 5.0);
        let cy = 0.5 * ih as f64 + uniform(&mut rng, -5.0, 5.0);
        let k = CameraIntrinsics::new(fx, fy, cx, cy, spec.distortion, iw, ih)
            .map_err(|_| SynthError::InvalidSpec("intrinsics do not fit the image"))?;
        intrinsics.insert(c as CameraId, k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 2));
    let dt = 1.0 / spec.fps;
    let margin = 0.5f64.min(0.25 * w.min(h));
    let people = (0..spec.n_people)
        .map(|id| {
            let height = spec.body_height + spec.height_spread * normal(&mut rng).clamp(-2.5, 2.5);
            let speed = spec.walk_speed * uniform(&mut rng, 0.8, 1.2);
            let mut pos = Vector2::new(uniform(&mut rng, margin, w - margin), uniform(&mut rng, margin, h - margin));
            let mut heading = uniform(&mut rng, 0.0, 2.0 * PI);
            let mut turn_rate = 0.0;
            let mut path = Vec::with_capacity(spec.n_frames as usize);
            for _ in 0..spec.n_frames {
                path.push(pos);
                // Ornstein-Uhlenbeck turn rate: smooth, occasionally sharp turns.
                turn_rate += -turn_rate * dt + 0.8 * dt.sqrt() * normal(&mut rng);
                heading += turn_rate * dt;
                let mut next = pos + speed * dt * Vector2::new(heading.cos(), heading.sin());
                if next.x < 0.0 || next.x > w {
                    heading = PI - heading;
                }
                if next.y < 0.0 || next.y > h {
                    heading = -heading;
                }
                next.x = next.x.clamp(0.0, w);
                next.y = next.y.clamp(0.0, h);
                pos = next;
            }
            Person {
                id: id as u32,
                height,
                path,
            }
        })
        .collect();

    Ok(GroundTruth {
        poses,
        intrinsics,
        people,
        body_mass_fraction: spec.body_mass_fraction,
    })
}

/// Everything a calibration run consumes, plus evaluation annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    /// Per camera, one tracklet per person seen at least once. Track ids are
    /// the person ids.
    pub tracks: BTreeMap<CameraId, Vec<Tracklet>>,
    pub annotated: Vec<AnnotatedPair>,
    pub priors: Vec<SegmentPrior>,
    /// `(camera, person, looks_like)` for every planted appearance swap.
    pub swapped: Vec<(CameraId, u32, u32)>,
}

fn in_image(k: &CameraIntrinsics, p: &Vector2<f64>) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= k.width as f64 && p.y <= k.height as f64
}

/// Projects a world point, requiring it to lie in front of the camera and
/// inside the image.
fn view(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    if pose.transform(x).z < 0.5 {
        return None;
    }
    project(x, pose, k).ok().filter(|p| in_image(k, p))
}

fn disc<R: Rng>(rng: &mut R, radius: f64) -> Vector2<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    Vector2::new(r * a.cos(), r * a.sin())
}

fn gaussian2<R: Rng>(rng: &mut R, sigma: f64) -> Vector2<f64> {
    if sigma > 0.0 {
        Vector2::new(sigma * normal(rng), sigma * normal(rng))
    } else {
        Vector2::zeros()
    }
}

/// Renders detections, embeddings, annotated pairs and scale priors.
pub fn render_observations(gt: &GroundTruth, spec: &SceneSpec) -> Result<RenderedScene, SynthError> {
    spec.validate()?;
    let n_people = gt.people.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 3));
    let identities: Vec<Vec<f64>> = (0..n_people)
        .map(|_| {
            let v: Vec<f64> = (0..spec.embedding_dim).map(|_| normal(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let aspects: Vec<f64> = (0..n_people).map(|_| 0.38 * uniform(&mut rng, 0.9, 1.1)).collect();

    let n_swap = ((spec.wrong_association_fraction * n_people as f64).round() as usize).min(n_people);
    let mut swapped = Vec::new();
    let mut looks_like: BTreeMap<CameraId, Vec<usize>> = BTreeMap::new();
    for &cam in gt.poses.keys() {
        let mut ident: Vec<usize> = (0..n_people).collect();
        if cam != 0 && n_swap >= 2 {
            let chosen = rand::seq::index::sample(&mut rng, n_people, n_swap).into_vec();
            for (i, &p) in chosen.iter().enumerate() {
                let q = chosen[(i + 1) % chosen.len()];
                ident[p] = q;
                swapped.push((cam, p as u32, q as u32));
            }
        }
        looks_like.insert(cam, ident);
    }

    let mut tracks = BTreeMap::new();
    let mut seen_anywhere = vec![false; n_people];
    for (&cam, pose) in &gt.poses {
        let k = &gt.intrinsics[&cam];
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 100 + cam as u64));
        let mut cam_tracks = Vec::new();
        for (pi, person) in gt.people.iter().enumerate() {
            let offset = disc(&mut rng, spec.center_offset_radius);
            let ident = &identities[looks_like[&cam][pi]];
            let mut boxes = Vec::new();
            let mut embeddings = Vec::new();
            for f in 0..spec.n_frames {
                let mass = gt.body_mass(pi, f);
                let (foot, head) = gt.prior_segment(pi, f);
                let jitter_w = uniform(&mut rng, 0.95, 1.05);
                let jitter_h = uniform(&mut rng, 0.97, 1.03);
                let noise = gaussian2(&mut rng, spec.pixel_noise_sigma);
                let emb: Vec<f64> = ident
                    .iter()
                    .map(|v| v + spec.embedding_noise * normal(&mut rng))
                    .collect();
                let (Some(m), Some(top), Some(bottom)) = (view(pose, k, &mass), view(pose, k, &head), view(pose, k, &foot)) else {
                    continue;
                };
                let height = (bottom - top).norm() * jitter_h;
                let width = aspects[pi] * height * jitter_w;
                let c = m + offset + noise;
                let corners = [c.x - 0.5 * width, c.y - 0.5 * height, c.x + 0.5 * width, c.y + 0.5 * height];
                let inside = corners[0] >= 0.0
                    && corners[1] >= 0.0
                    && corners[2] <= k.width as f64
                    && corners[3] <= k.height as f64;
                if !inside {
                    continue;
                }
                let Ok(b) = BBox::new(corners, f, person.id, cam) else {
                    continue;
                };
                boxes.push(b);
                embeddings.push(Some(emb));
            }
            if boxes.is_empty() {
                continue;
            }
            seen_anywhere[pi] = true;
            let t = Tracklet::new(cam, person.id, boxes)
                .and_then(|t| t.with_embeddings(embeddings))
                .expect("rendered boxes are valid and time ordered");
            cam_tracks.push(t);
        }
        tracks.insert(cam, cam_tracks);
    }
    for (pi, seen) in seen_anywhere.iter().enumerate() {
        if !seen {
            log::warn!("person {} is never visible and was dropped", gt.people[pi].id);
        }
    }

    let cams: Vec<CameraId> = gt.poses.keys().copied().collect();
    let [w, h] = spec.extent;
    let mut annotated = Vec::new();
    let mut priors = Vec::new();
    for (i, &ca) in cams.iter().enumerate() {
        for &cb in &cams[i + 1..] {
            let (pa, pb) = (&gt.poses[&ca], &gt.poses[&cb]);
            let (ka, kb) = (&gt.intrinsics[&ca], &gt.intrinsics[&cb]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 10_000 + 100 * ca as u64 + cb as u64));
            let mut found = 0;
            let mut attempts = 0;
            while found < spec.annotated_pairs {
                attempts += 1;
                if attempts > 100_000 {
                    return Err(SynthError::NoCommonView {
                        cam_a: ca,
                        cam_b: cb,
                        wanted: spec.annotated_pairs,
                    });
                }
                let x = Vector3::new(uniform(&mut rng, 0.0, w), uniform(&mut rng, 0.0, h), uniform(&mut rng, 0.0, 2.0));
                if let (Some(a), Some(b)) = (view(pa, ka, &x), view(pb, kb, &x)) {
                    annotated.push(AnnotatedPair { cam_a: ca, cam_b: cb, a, b });
                    found += 1;
                }
            }

            let mut segments = Vec::new();
            for (pi, person) in gt.people.iter().enumerate() {
                for f in (0..spec.n_frames).step_by(spec.prior_stride as usize) {
                    let (foot, head) = gt.prior_segment(pi, f);
                    if let (Some(fa), Some(ha), Some(fb), Some(hb)) =
                        (view(pa, ka, &foot), view(pa, ka, &head), view(pb, kb, &foot), view(pb, kb, &head))
                    {
                        segments.push((fa, ha, fb, hb, person.height));
                    }
                }
            }
            // Evenly spread over people and time.
            let keep = spec.priors_per_pair.unwrap_or(segments.len()).min(segments.len());
            let s = spec.prior_noise_sigma;
            for i in 0..keep {
                let (fa, ha, fb, hb, length) = segments[i * segments.len() / keep];
                priors.push(SegmentPrior {
                    cam_a: ca,
                    cam_b: cb,
                    a_start: fa + gaussian2(&mut rng, s),
                    a_end: ha + gaussian2(&mut rng, s),
                    b_start: fb + gaussian2(&mut rng, s),
                    b_end: hb + gaussian2(&mut rng, s),
                    length,
                });
            }
        }
    }

    Ok(RenderedScene {
        tracks,
        annotated,
        priors,
        swapped,
    })
}
