//! Synthetic box-regression scenes, augmentation, and client partitioning.
//!
//! A scene stands in for one satellite image: a feature vector plus one
//! ground-truth axis-aligned box in normalized [0, 1] coordinates. Boxes are
//! produced by per-region affine maps of the features (plus optional Gaussian
//! noise), so the latent region label correlates with box statistics and
//! region-skewed partitions are genuinely non-IID.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{CoreError, Result};
use crate::param::ParamVector;
use crate::rng::{seeded_rng, stream};
use crate::scalar::{from_f64, Scalar};

/// Smallest side a clipped box may end up with.
const MIN_SIDE: f64 = 1e-3;

/// Axis-aligned box; `x_min < x_max` and `y_min < y_max` always hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T: Scalar> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        for v in [x_min, y_min, x_max, y_max] {
            if !v.is_finite() {
                return Err(CoreError::Numeric(format!("box coordinate {v}")));
            }
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(CoreError::Protocol(format!(
                "degenerate box: ({x_min}, {y_min}) .. ({x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// (cx, cy, w, h) view used by the box models and the generator.
    pub fn center_size(&self) -> [T; 4] {
        let two = T::one() + T::one();
        [
            (self.x_min + self.x_max) / two,
            (self.y_min + self.y_max) / two,
            self.x_max - self.x_min,
            self.y_max - self.y_min,
        ]
    }

    pub fn from_center_size(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        let two = T::one() + T::one();
        Self::new(cx - w / two, cy - h / two, cx + w / two, cy + h / two)
    }

    pub fn corners(&self) -> [(T, T); 4] {
        [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        ]
    }

    fn within_unit(&self) -> bool {
        self.x_min >= T::zero()
            && self.y_min >= T::zero()
            && self.x_max <= T::one()
            && self.y_max <= T::one()
    }
}

/// One synthetic example: descriptor features, one truth box, a latent region.
#[derive(Debug, Clone)]
pub struct Scene<T: Scalar> {
    pub scene_id: u64,
    pub features: ParamVector<T>,
    pub truth_box: BoundingBox<T>,
    pub region_label: usize,
}

impl<T: Scalar> Scene<T> {
    pub fn new(
        scene_id: u64,
        features: ParamVector<T>,
        truth_box: BoundingBox<T>,
        region_label: usize,
    ) -> Result<Self> {
        if !truth_box.within_unit() {
            return Err(CoreError::Protocol(format!(
                "scene {scene_id}: truth box leaves the unit square"
            )));
        }
        Ok(Self {
            scene_id,
            features,
            truth_box,
            region_label,
        })
    }
}

/// The scenes assigned to one client.
#[derive(Debug, Clone)]
pub struct Shard<T: Scalar> {
    pub client_id: usize,
    pub scenes: Vec<Scene<T>>,
}

/// How scenes are spread across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    /// Uniform random split; shard sizes differ by at most one.
    Iid,
    /// Shard sizes follow a geometric ramp, each half the previous.
    QuantitySkew,
    /// Per-region Dirichlet(alpha) allocation, rebalanced so shard sizes stay
    /// within ~10% of the mean.
    RegionDirichlet,
}

impl std::str::FromStr for PartitionScheme {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionScheme::Iid),
            "quantity_skew" => Ok(PartitionScheme::QuantitySkew),
            "region_dirichlet" => Ok(PartitionScheme::RegionDirichlet),
            other => Err(CoreError::Config(format!(
                "unknown partition scheme {other:?} \
                 (expected \"iid\", \"quantity_skew\" or \"region_dirichlet\")"
            ))),
        }
    }
}

impl PartitionScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::QuantitySkew => "quantity_skew",
            PartitionScheme::RegionDirichlet => "region_dirichlet",
        }
    }
}

/// Per-region affine map from features to raw (cx, cy, w, h).
#[derive(Debug, Clone)]
pub struct RegionMap {
    /// Four rows of `d_in` coefficients each.
    pub coef: [Vec<f64>; 4],
    pub base: [f64; 4],
}

impl RegionMap {
    pub fn apply(&self, features: &[f64]) -> [f64; 4] {
        let mut out = self.base;
        for (row, slot) in self.coef.iter().zip(out.iter_mut()) {
            for (c, x) in row.iter().zip(features) {
                *slot += c * x;
            }
        }
        out
    }
}

// Coefficient budgets. Features live in [0, 1]^d, so the affine outputs stay
// inside CENTER_BASE +- CENTER_SPAN resp. SIZE_BASE +- SIZE_SPAN, which keeps
// every noiseless box strictly inside the unit square (no clamp ever binds).
const CENTER_BASE: (f64, f64) = (0.4, 0.6);
const CENTER_SPAN: f64 = 0.1;
const SIZE_BASE: (f64, f64) = (0.15, 0.3);
const SIZE_SPAN: f64 = 0.05;

/// Deterministic scene factory. It owns the per-region affine maps, which the
/// rotation augmentation needs to keep features consistent with moved boxes.
#[derive(Debug, Clone)]
pub struct SceneGenerator {
    d_in: usize,
    noise_sigma: f64,
    seed: u64,
    maps: Vec<RegionMap>,
}

impl SceneGenerator {
    pub fn new(d_in: usize, regions: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if d_in < 4 {
            return Err(CoreError::Config(format!("d_in must be >= 4, got {d_in}")));
        }
        if regions == 0 {
            return Err(CoreError::Config("regions must be >= 1".into()));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(CoreError::Config(format!(
                "noise_sigma must be >= 0, got {noise_sigma}"
            )));
        }
        let mut rng = seeded_rng(seed, &[stream::REGION_MAPS]);
        let mut maps = Vec::with_capacity(regions);
        for _ in 0..regions {
            let mut coef: [Vec<f64>; 4] = Default::default();
            let mut base = [0.0_f64; 4];
            for j in 0..4 {
                let (span, lo, hi) = if j < 2 {
                    (CENTER_SPAN, CENTER_BASE.0, CENTER_BASE.1)
                } else {
                    (SIZE_SPAN, SIZE_BASE.0, SIZE_BASE.1)
                };
                base[j] = rng.gen_range(lo..hi);
                let limit = span / d_in as f64;
                coef[j] = (0..d_in).map(|_| rng.gen_range(-limit..limit)).collect();
            }
            maps.push(RegionMap { coef, base });
        }
        Ok(Self {
            d_in,
            noise_sigma,
            seed,
            maps,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn regions(&self) -> usize {
        self.maps.len()
    }

    pub fn region_maps(&self) -> &[RegionMap] {
        &self.maps
    }

    /// Scene `i` depends only on (seed, i), never on `count`.
    pub fn generate<T: Scalar>(&self, count: usize) -> Result<Vec<Scene<T>>> {
        if count == 0 {
            return Err(CoreError::Config("dataset count must be >= 1".into()));
        }
        (0..count as u64).map(|id| self.scene(id)).collect()
    }

    fn scene<T: Scalar>(&self, scene_id: u64) -> Result<Scene<T>> {
        let mut rng = seeded_rng(self.seed, &[stream::SCENE, scene_id]);
        let region = rng.gen_range(0..self.maps.len());
        let features: Vec<f64> = (0..self.d_in).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut raw = self.maps[region].apply(&features);
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| CoreError::Config(format!("noise_sigma: {e}")))?;
            for slot in raw.iter_mut() {
                *slot += normal.sample(&mut rng);
            }
        }
        let truth = clamp_box_params(raw)?;
        Scene::new(
            scene_id,
            ParamVector::new(features.into_iter().map(from_f64).collect())?,
            convert_box(&truth)?,
            region,
        )
    }

    /// Rotate the truth box about the image center and replace it with the
    /// axis-aligned hull of the rotated corners, clipped to the unit square.
    /// Features are shifted by the least-squares preimage of the box change
    /// under this scene's region map, so the feature-to-box relation survives
    /// augmentation.
    pub fn rotate_augment<T: Scalar>(&self, scene: &Scene<T>, theta_deg: f64) -> Result<Scene<T>> {
        if scene.region_label >= self.maps.len() {
            return Err(CoreError::Protocol(format!(
                "scene {} carries region {} but the generator has {} regions",
                scene.scene_id,
                scene.region_label,
                self.maps.len()
            )));
        }
        if theta_deg == 0.0 {
            return Ok(scene.clone());
        }
        let theta = theta_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let mut x_lo = f64::INFINITY;
        let mut x_hi = f64::NEG_INFINITY;
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for (cx, cy) in scene.truth_box.corners() {
            let dx = to_f64(cx) - 0.5;
            let dy = to_f64(cy) - 0.5;
            let rx = 0.5 + cos * dx - sin * dy;
            let ry = 0.5 + sin * dx + cos * dy;
            x_lo = x_lo.min(rx);
            x_hi = x_hi.max(rx);
            y_lo = y_lo.min(ry);
            y_hi = y_hi.max(ry);
        }
        let (x_lo, x_hi) = clip_interval(x_lo, x_hi);
        let (y_lo, y_hi) = clip_interval(y_lo, y_hi);
        let hull = BoundingBox::new(x_lo, y_lo, x_hi, y_hi)?;

        let old_params = f64_center_size(&scene.truth_box);
        let new_params = hull.center_size();
        let mut delta = [0.0_f64; 4];
        for j in 0..4 {
            delta[j] = new_params[j] - old_params[j];
        }
        let shift = feature_shift(&self.maps[scene.region_label], &delta)?;
        let features: Vec<T> = scene
            .features
            .as_slice()
            .iter()
            .zip(&shift)
            .map(|(&x, &dx)| x + from_f64::<T>(dx))
            .collect();
        Scene::new(
            scene.scene_id,
            ParamVector::new(features)?,
            convert_box(&hull)?,
            scene.region_label,
        )
    }

    /// Append `copies_per_scene` rotated copies of every scene, with fresh
    /// scene ids and per-copy angles drawn uniformly from [-max_deg, max_deg].
    pub fn augment_rotations<T: Scalar>(
        &self,
        scenes: &[Scene<T>],
        copies_per_scene: usize,
        max_deg: f64,
    ) -> Result<Vec<Scene<T>>> {
        if !(0.0..=360.0).contains(&max_deg) {
            return Err(CoreError::Config(format!(
                "augmentation angle bound must lie in [0, 360], got {max_deg}"
            )));
        }
        let mut out = scenes.to_vec();
        if copies_per_scene == 0 {
            return Ok(out);
        }
        let next_id = scenes.iter().map(|s| s.scene_id).max().unwrap_or(0) + 1;
        for (i, scene) in scenes.iter().enumerate() {
            for j in 0..copies_per_scene {
                let mut rng = seeded_rng(self.seed, &[stream::AUGMENT, scene.scene_id, j as u64]);
                let theta = rng.gen_range(-max_deg..=max_deg);
                let mut copy = self.rotate_augment(scene, theta)?;
                copy.scene_id = next_id + (i * copies_per_scene + j) as u64;
                out.push(copy);
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper over [`SceneGenerator`].
pub fn generate_dataset<T: Scalar>(
    count: usize,
    d_in: usize,
    regions: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Scene<T>>> {
    SceneGenerator::new(d_in, regions, noise_sigma, seed)?.generate(count)
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar convertible to f64")
}

fn f64_center_size<T: Scalar>(b: &BoundingBox<T>) -> [f64; 4] {
    let p = b.center_size();
    [to_f64(p[0]), to_f64(p[1]), to_f64(p[2]), to_f64(p[3])]
}

fn convert_box<T: Scalar>(b: &BoundingBox<f64>) -> Result<BoundingBox<T>> {
    BoundingBox::new(
        from_f64(b.x_min),
        from_f64(b.y_min),
        from_f64(b.x_max),
        from_f64(b.y_max),
    )
}

/// Clamp raw (cx, cy, w, h) so the box is valid and inside the unit square.
fn clamp_box_params(raw: [f64; 4]) -> Result<BoundingBox<f64>> {
    let w = raw[2].clamp(MIN_SIDE, 1.0);
    let h = raw[3].clamp(MIN_SIDE, 1.0);
    let cx = raw[0].clamp(w / 2.0, 1.0 - w / 2.0);
    let cy = raw[1].clamp(h / 2.0, 1.0 - h / 2.0);
    BoundingBox::from_center_size(cx, cy, w, h)
}

/// Clamp a hull interval to [0, 1], keeping it at least MIN_SIDE wide.
fn clip_interval(lo: f64, hi: f64) -> (f64, f64) {
    let lo = lo.clamp(0.0, 1.0);
    let hi = hi.clamp(0.0, 1.0);
    if hi - lo >= MIN_SIDE {
        return (lo, hi);
    }
    let center = ((lo + hi) / 2.0).clamp(MIN_SIDE / 2.0, 1.0 - MIN_SIDE / 2.0);
    (center - MIN_SIDE / 2.0, center + MIN_SIDE / 2.0)
}

/// `x' = x + M^T (M M^T)^{-1} dp`: the minimum-norm feature shift realizing a
/// box-parameter change `dp` under the region's affine map.
fn feature_shift(map: &RegionMap, delta_params: &[f64; 4]) -> Result<Vec<f64>> {
    let d = map.coef[0].len();
    let mut gram = [[0.0_f64; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            gram[i][j] = map.coef[i]
                .iter()
                .zip(&map.coef[j])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let y = solve4(gram, *delta_params)?;
    let mut shift = vec![0.0_f64; d];
    for (j, row) in map.coef.iter().enumerate() {
        for (s, c) in shift.iter_mut().zip(row) {
            *s += c * y[j];
        }
    }
    Ok(shift)
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(CoreError::Numeric(
                "singular region map; cannot shift features".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0_f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in (row + 1)..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Seed-deterministic shuffle split; the test side is held by the server only.
pub fn split_train_test<T: Scalar>(
    scenes: &[Scene<T>],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Scene<T>>, Vec<Scene<T>>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(CoreError::Config(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut indices: Vec<usize> = (0..scenes.len()).collect();
    indices.shuffle(&mut seeded_rng(seed, &[stream::SPLIT]));
    let n_test = ((scenes.len() as f64 * test_fraction).round() as usize).min(scenes.len() - 1);
    let (test_idx, train_idx) = indices.split_at(n_test);
    let pick = |idx: &[usize]| idx.iter().map(|&i| scenes[i].clone()).collect::<Vec<_>>();
    Ok((pick(train_idx), pick(test_idx)))
}

/// Split scenes into per-client shards.
pub fn partition<T: Scalar>(
    scenes: &[Scene<T>],
    n_clients: usize,
    scheme: PartitionScheme,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Shard<T>>> {
    if n_clients == 0 {
        return Err(CoreError::Config("n_clients must be >= 1".into()));
    }
    if n_clients > scenes.len() {
        return Err(CoreError::Config(format!(
            "cannot split {} scenes across {} clients",
            scenes.len(),
            n_clients
        )));
    }
    if scheme == PartitionScheme::RegionDirichlet && !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CoreError::Config(format!(
            "dirichlet alpha must be > 0, got {alpha}"
        )));
    }
    let mut rng = seeded_rng(seed, &[stream::PARTITION]);
    let assigned: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Iid => {
            let mut indices: Vec<usize> = (0..scenes.len()).collect();
            indices.shuffle(&mut rng);
            deal_chunks(&indices, near_equal_sizes(scenes.len(), n_clients))
        }
        PartitionScheme::QuantitySkew => {
            let mut indices: Vec<usize> = (0..scenes.len()).collect();
            indices.shuffle(&mut rng);
            let weights: Vec<f64> = (0..n_clients).map(|i| 0.5_f64.powi(i as i32)).collect();
            let sizes = apportion(scenes.len(), &weights, true);
            deal_chunks(&indices, sizes)
        }
        PartitionScheme::RegionDirichlet => {
            let regions = scenes.iter().map(|s| s.region_label).max().unwrap_or(0) + 1;
            let mut by_region: Vec<Vec<usize>> = vec![Vec::new(); regions];
            for (i, scene) in scenes.iter().enumerate() {
                by_region[scene.region_label].push(i);
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| CoreError::Config(format!("dirichlet alpha: {e}")))?;
            let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
            for region_scenes in &by_region {
                if region_scenes.is_empty() {
                    continue;
                }
                let mut weights: Vec<f64> =
                    (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                if weights.iter().sum::<f64>() <= 0.0 {
                    weights = vec![1.0; n_clients];
                }
                let sizes = apportion(region_scenes.len(), &weights, false);
                let mut cursor = 0;
                for (client, &size) in sizes.iter().enumerate() {
                    assigned[client].extend_from_slice(&region_scenes[cursor..cursor + size]);
                    cursor += size;
                }
            }
            rebalance(&mut assigned, scenes);
            assigned
        }
    };
    let mut shards = Vec::with_capacity(n_clients);
    for (client_id, indices) in assigned.into_iter().enumerate() {
        if indices.is_empty() {
            return Err(CoreError::Internal(format!(
                "client {client_id} received an empty shard"
            )));
        }
        shards.push(Shard {
            client_id,
            scenes: indices.into_iter().map(|i| scenes[i].clone()).collect(),
        });
    }
    Ok(shards)
}

fn near_equal_sizes(count: usize, n: usize) -> Vec<usize> {
    let base = count / n;
    let rem = count % n;
    (0..n).map(|i| base + usize::from(i < rem)).collect()
}

fn deal_chunks(indices: &[usize], sizes: Vec<usize>) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for size in sizes {
        out.push(indices[cursor..cursor + size].to_vec());
        cursor += size;
    }
    out
}

/// Largest-remainder apportionment of `count` items by weight. With
/// `min_one`, every slot ends up with at least one item (requires
/// `count >= weights.len()`).
fn apportion(count: usize, weights: &[f64], min_one: bool) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * count as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = exact[i] - sizes[i] as f64;
        let fj = exact[j] - sizes[j] as f64;
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(count - assigned) {
        sizes[i] += 1;
    }
    if min_one {
        loop {
            let Some(zero) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let donor = (0..sizes.len())
                .max_by(|&i, &j| sizes[i].cmp(&sizes[j]).then(j.cmp(&i)))
                .unwrap();
            sizes[donor] -= 1;
            sizes[zero] += 1;
        }
    }
    sizes
}

/// Move scenes from the largest shard to the smallest, taking from the donor's
/// most numerous region, until sizes differ by at most ~10% of the mean.
fn rebalance<T: Scalar>(assigned: &mut [Vec<usize>], scenes: &[Scene<T>]) {
    let n = assigned.len();
    if n < 2 {
        return;
    }
    let total: usize = assigned.iter().map(Vec::len).sum();
    let tolerance = ((total as f64 / n as f64) * 0.10).floor().max(1.0) as usize;
    loop {
        let largest = (0..n).max_by_key(|&i| (assigned[i].len(), usize::MAX - i)).unwrap();
        let smallest = (0..n).min_by_key(|&i| (assigned[i].len(), i)).unwrap();
        if assigned[largest].len() - assigned[smallest].len() <= tolerance {
            break;
        }
        let dominant = {
            let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
            for &i in &assigned[largest] {
                *counts.entry(scenes[i].region_label).or_default() += 1;
            }
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(region, _)| region)
                .unwrap()
        };
        let pos = assigned[largest]
            .iter()
            .rposition(|&i| scenes[i].region_label == dominant)
            .unwrap();
        let moved = assigned[largest].remove(pos);
        assigned[smallest].push(moved);
    }
}

/// Region counts over a scene list; length is `regions`.
pub fn region_histogram<T: Scalar>(scenes: &[Scene<T>], regions: usize) -> Vec<usize> {
    let mut hist = vec![0_usize; regions];
    for scene in scenes {
        if scene.region_label < regions {
            hist[scene.region_label] += 1;
        }
    }
    hist
}

/// Total-variation distance between two count histograms (on proportions).
pub fn tv_distance(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb): (usize, usize) = (a.iter().sum(), b.iter().sum());
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..a.len().max(b.len()) {
        let pa = a.get(i).copied().unwrap_or(0) as f64 / na as f64;
        let pb = b.get(i).copied().unwrap_or(0) as f64 / nb as f64;
        acc += (pa - pb).abs();
    }
    acc / 2.0
}

// --- dataset export / import -----------------------------------------------
//
// One scene per line:
//   scene_id region_label f_1 .. f_d x_min y_min x_max y_max
// Floats are written with 17 significant digits, which round-trips f64
// bit-exactly through decimal text.

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write scenes in the line-delimited text format.
pub fn write_scenes<T: Scalar, W: Write>(scenes: &[Scene<T>], out: &mut W) -> Result<()> {
    for scene in scenes {
        let mut line = format!("{} {}", scene.scene_id, scene.region_label);
        for &f in scene.features.as_slice() {
            line.push(' ');
            line.push_str(&fmt_float(to_f64(f)));
        }
        for v in [
            scene.truth_box.x_min,
            scene.truth_box.y_min,
            scene.truth_box.x_max,
            scene.truth_box.y_max,
        ] {
            line.push(' ');
            line.push_str(&fmt_float(to_f64(v)));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Scenes as a single text blob; also what the dataset content hash covers.
pub fn scenes_to_string<T: Scalar>(scenes: &[Scene<T>]) -> Result<String> {
    let mut buf = Vec::new();
    write_scenes(scenes, &mut buf)?;
    String::from_utf8(buf).map_err(|e| CoreError::Internal(e.to_string()))
}

/// Read scenes from the line-delimited text format.
pub fn read_scenes<T: Scalar, R: BufRead>(input: R) -> Result<Vec<Scene<T>>> {
    let mut scenes: Vec<Scene<T>> = Vec::new();
    let mut d_in: Option<usize> = None;
    for (lineno, line) in input.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 7 {
            return Err(CoreError::Config(format!(
                "dataset line {lineno}: expected at least 7 fields, got {}",
                tokens.len()
            )));
        }
        let d = tokens.len() - 6;
        if let Some(expected) = d_in {
            if d != expected {
                return Err(CoreError::Config(format!(
                    "dataset line {lineno}: feature length {d} differs from {expected}"
                )));
            }
        } else {
            d_in = Some(d);
        }
        let parse_int = |tok: &str, what: &str| {
            tok.parse::<u64>().map_err(|_| {
                CoreError::Config(format!("dataset line {lineno}: bad {what} {tok:?}"))
            })
        };
        let parse_float = |tok: &str| {
            tok.parse::<f64>().map_err(|_| {
                CoreError::Config(format!("dataset line {lineno}: bad float {tok:?}"))
            })
        };
        let scene_id = parse_int(tokens[0], "scene_id")?;
        let region = parse_int(tokens[1], "region_label")? as usize;
        let features: Vec<T> = tokens[2..2 + d]
            .iter()
            .map(|t| parse_float(t).map(from_f64))
            .collect::<Result<_>>()?;
        let coords: Vec<f64> = tokens[2 + d..]
            .iter()
            .map(|t| parse_float(t))
            .collect::<Result<_>>()?;
        let truth = BoundingBox::new(
            from_f64::<T>(coords[0]),
            from_f64::<T>(coords[1]),
            from_f64::<T>(coords[2]),
            from_f64::<T>(coords[3]),
        )
        .map_err(|e| CoreError::Config(format!("dataset line {lineno}: {e}")))?;
        scenes.push(
            Scene::new(scene_id, ParamVector::new(features)?, truth, region)
                .map_err(|e| CoreError::Config(format!("dataset line {lineno}: {e}")))?,
        );
    }
    Ok(scenes)
}
