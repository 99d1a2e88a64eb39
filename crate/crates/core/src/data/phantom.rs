//! Synthetic chest-radiograph-like phantoms: two elliptical lung fields on a
//! shaded background, rendered through a per-domain intensity model so the
//! same anatomy can be drawn with two different appearances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Image, Item, LabelMap, SplitTag, LEFT_LUNG, RIGHT_LUNG};
use crate::error::{Error, Result};
use crate::par;

/// Lung-field geometry ranges, as fractions of the image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LobeGeometry {
    /// Maximum absolute jitter of each lobe centre.
    pub center_jitter: f64,
    /// Horizontal centre of the right lung (drawn on the image's left).
    pub right_center_x: f64,
    pub left_center_x: f64,
    pub center_y: f64,
    pub axis_x_min: f64,
    pub axis_x_max: f64,
    pub axis_y_min: f64,
    pub axis_y_max: f64,
    /// The left lung is scaled by this factor (cardiac notch stand-in).
    pub left_scale: f64,
}

impl Default for LobeGeometry {
    fn default() -> Self {
        LobeGeometry {
            center_jitter: 0.03,
            right_center_x: 0.29,
            left_center_x: 0.71,
            center_y: 0.5,
            axis_x_min: 0.11,
            axis_x_max: 0.16,
            axis_y_min: 0.24,
            axis_y_max: 0.34,
            left_scale: 0.88,
        }
    }
}

impl LobeGeometry {
    /// Checks that every admissible draw keeps both lobes inside the frame
    /// and separated by at least one pixel.
    pub fn validate(&self, size: usize) -> Result<()> {
        let px = 1.0 / size as f64;
        let j = self.center_jitter;
        let ok_ranges = self.axis_x_min > 0.0
            && self.axis_x_min <= self.axis_x_max
            && self.axis_y_min > 0.0
            && self.axis_y_min <= self.axis_y_max
            && self.left_scale > 0.0
            && j >= 0.0;
        if !ok_ranges {
            return Err(Error::Config("lobe axis ranges must be positive and ordered".into()));
        }
        let ax = self.axis_x_max;
        let ay = self.axis_y_max;
        let lax = ax * self.left_scale;
        let lay = ay * self.left_scale;
        let inside = self.right_center_x - j - ax >= px
            && self.left_center_x + j + lax <= 1.0 - px
            && self.center_y - j - ay.max(lay) >= px
            && self.center_y + j + ay.max(lay) <= 1.0 - px;
        let disjoint = (self.left_center_x - j - lax) - (self.right_center_x + j + ax) >= 2.0 * px;
        if !inside || !disjoint {
            return Err(Error::Config(
                "lobe geometry ranges cannot fit two disjoint lobes inside the frame".into(),
            ));
        }
        let min_axis = self.axis_x_min.min(self.axis_y_min) * self.left_scale.min(1.0);
        if min_axis * (size as f64) < 1.5 {
            return Err(Error::Config("lobes would be smaller than two pixels".into()));
        }
        Ok(())
    }
}

/// Maps the anatomical base intensity to a domain's appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub background: f64,
    pub lobe: f64,
    pub gamma: f64,
    /// Contrast scale about mid-gray.
    pub contrast: f64,
    pub invert: bool,
    pub noise_sigma: f64,
}

impl IntensityModel {
    /// Dark lung fields on a bright background.
    pub fn source_default() -> Self {
        IntensityModel {
            background: 200.0,
            lobe: 60.0,
            gamma: 1.0,
            contrast: 1.0,
            invert: false,
            noise_sigma: 6.0,
        }
    }

    /// Gamma 0.5 with inverted contrast.
    pub fn target_default() -> Self {
        IntensityModel {
            background: 200.0,
            lobe: 60.0,
            gamma: 0.5,
            contrast: 0.9,
            invert: true,
            noise_sigma: 9.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let level = |v: f64| (0.0..=255.0).contains(&v);
        if !level(self.background) || !level(self.lobe) {
            return Err(Error::Config("intensity levels must lie in [0, 255]".into()));
        }
        if !(self.gamma > 0.0 && self.contrast > 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("gamma and contrast must be positive, noise non-negative".into()));
        }
        Ok(())
    }

    fn render(&self, base: f64) -> f64 {
        let u = (base / 255.0).clamp(0.0, 1.0);
        let u = (0.5 + self.contrast * (u - 0.5)).clamp(0.0, 1.0);
        let u = u.powf(self.gamma);
        let u = if self.invert { 1.0 - u } else { u };
        u * 255.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub working_size: usize,
    pub geometry: LobeGeometry,
    pub intensity: IntensityModel,
    pub domain: Domain,
    /// Seeds the anatomy; the noise stream is derived from it and the domain.
    pub seed: u64,
    pub spacing_mm: f64,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

fn draw_lobes(g: &LobeGeometry, size: usize, rng: &mut ChaCha8Rng) -> (Ellipse, Ellipse) {
    let s = size as f64;
    let jit = |rng: &mut ChaCha8Rng| {
        if g.center_jitter > 0.0 {
            rng.random_range(-g.center_jitter..=g.center_jitter)
        } else {
            0.0
        }
    };
    let axis = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let right = Ellipse {
        cx: (g.right_center_x + jit(rng)) * s,
        cy: (g.center_y + jit(rng)) * s,
        ax: axis(g.axis_x_min, g.axis_x_max, rng) * s,
        ay: axis(g.axis_y_min, g.axis_y_max, rng) * s,
    };
    let left = Ellipse {
        cx: (g.left_center_x + jit(rng)) * s,
        cy: (g.center_y + jit(rng)) * s,
        ax: axis(g.axis_x_min, g.axis_x_max, rng) * s * g.left_scale,
        ay: axis(g.axis_y_min, g.axis_y_max, rng) * s * g.left_scale,
    };
    (right, left)
}

const DOMAIN_STREAM: [(Domain, u64); 3] = [
    (Domain::Source, 0x51),
    (Domain::Target, 0x7a),
    (Domain::Transformed, 0x3c),
];

fn case_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1));
    rng.set_stream(stream);
    rng
}

fn render_case(p: &PhantomParams, index: usize) -> Item {
    let n = p.working_size;
    let (right, left) = draw_lobes(&p.geometry, n, &mut case_rng(p.seed, index, 1));
    let stream = DOMAIN_STREAM.iter().find(|(d, _)| *d == p.domain).map_or(0, |x| x.1);
    let mut noise_rng = case_rng(p.seed, index, stream);
    let noise = Normal::new(0.0, p.intensity.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma");

    let mut labels = vec![0u8; n * n];
    let mut pixels = Vec::with_capacity(n * n);
    let c = n as f64 / 2.0;
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let class = if right.contains(fx, fy) {
                RIGHT_LUNG
            } else if left.contains(fx, fy) {
                LEFT_LUNG
            } else {
                0
            };
            labels[y * n + x] = class;
            let level = if class == 0 { p.intensity.background } else { p.intensity.lobe };
            // soft radial falloff towards the corners
            let r2 = ((fx - c) * (fx - c) + (fy - c) * (fy - c)) / (c * c);
            let base = level * (1.0 - 0.12 * r2.min(2.0));
            let mut v = p.intensity.render(base);
            if p.intensity.noise_sigma > 0.0 {
                v += noise.sample(&mut noise_rng);
            }
            pixels.push(v.clamp(0.0, 255.0) as f32);
        }
    }
    Item {
        case_id: format!("{}-{:04}", domain_prefix(p.domain), index),
        image: Image {
            height: n,
            width: n,
            pixels,
            spacing_mm: p.spacing_mm,
            domain: p.domain,
        },
        label: Some(LabelMap {
            height: n,
            width: n,
            labels,
        }),
    }
}

fn domain_prefix(d: Domain) -> &'static str {
    match d {
        Domain::Source => "src",
        Domain::Target => "tgt",
        Domain::Transformed => "xfm",
    }
}

/// Renders `n` labeled phantoms. Deterministic in `params`.
pub fn generate_phantoms(params: &PhantomParams, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("phantom count"));
    }
    if params.working_size < 8 {
        return Err(Error::Config("phantom working size must be at least 8".into()));
    }
    params.geometry.validate(params.working_size)?;
    params.intensity.validate()?;
    let idx: Vec<usize> = (0..n).collect();
    let items = par::map(&idx, |&i| render_case(params, i));
    Dataset::new(items, params.domain, SplitTag::Unsplit)
}

/// Flat key/value description of a two-domain phantom study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub working_size: usize,
    pub spacing_mm: f64,
    pub source_seed: u64,
    pub target_seed: u64,
    pub n_source: usize,
    pub n_target: usize,

    pub center_jitter: f64,
    pub axis_x_min: f64,
    pub axis_x_max: f64,
    pub axis_y_min: f64,
    pub axis_y_max: f64,
    pub left_scale: f64,

    pub source_background: f64,
    pub source_lobe: f64,
    pub source_gamma: f64,
    pub source_contrast: f64,
    pub source_invert: bool,
    pub source_noise_sigma: f64,

    pub target_background: f64,
    pub target_lobe: f64,
    pub target_gamma: f64,
    pub target_contrast: f64,
    pub target_invert: bool,
    pub target_noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let g = LobeGeometry::default();
        let s = IntensityModel::source_default();
        let t = IntensityModel::target_default();
        PhantomConfig {
            working_size: 64,
            spacing_mm: 1.0,
            source_seed: 1,
            target_seed: 2,
            n_source: 60,
            n_target: 50,
            center_jitter: g.center_jitter,
            axis_x_min: g.axis_x_min,
            axis_x_max: g.axis_x_max,
            axis_y_min: g.axis_y_min,
            axis_y_max: g.axis_y_max,
            left_scale: g.left_scale,
            source_background: s.background,
            source_lobe: s.lobe,
            source_gamma: s.gamma,
            source_contrast: s.contrast,
            source_invert: s.invert,
            source_noise_sigma: s.noise_sigma,
            target_background: t.background,
            target_lobe: t.lobe,
            target_gamma: t.gamma,
            target_contrast: t.contrast,
            target_invert: t.invert,
            target_noise_sigma: t.noise_sigma,
        }
    }
}

impl PhantomConfig {
    pub fn geometry(&self) -> LobeGeometry {
        LobeGeometry {
            center_jitter: self.center_jitter,
            axis_x_min: self.axis_x_min,
            axis_x_max: self.axis_x_max,
            axis_y_min: self.axis_y_min,
            axis_y_max: self.axis_y_max,
            left_scale: self.left_scale,
            ..LobeGeometry::default()
        }
    }

    pub fn params(&self, domain: Domain) -> PhantomParams {
        let (intensity, seed) = match domain {
            Domain::Target => (
                IntensityModel {
                    background: self.target_background,
                    lobe: self.target_lobe,
                    gamma: self.target_gamma,
                    contrast: self.target_contrast,
                    invert: self.target_invert,
                    noise_sigma: self.target_noise_sigma,
                },
                self.target_seed,
            ),
            _ => (
                IntensityModel {
                    background: self.source_background,
                    lobe: self.source_lobe,
                    gamma: self.source_gamma,
                    contrast: self.source_contrast,
                    invert: self.source_invert,
                    noise_sigma: self.source_noise_sigma,
                },
                self.source_seed,
            ),
        };
        PhantomParams {
            working_size: self.working_size,
            geometry: self.geometry(),
            intensity,
            domain,
            seed,
            spacing_mm: self.spacing_mm,
        }
    }

    /// Source and target datasets of the configured sizes.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            generate_phantoms(&self.params(Domain::Source), self.n_source)?,
            generate_phantoms(&self.params(Domain::Target), self.n_target)?,
        ))
    }
}
