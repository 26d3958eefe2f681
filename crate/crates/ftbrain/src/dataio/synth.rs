//! Seeded synthetic brain-like volumes.
//!
//! Geometry is evaluated analytically at smoothly deformed coordinates, so
//! no resampling step exists and every voxel is a pure function of
//! (label, subject_seed, dims). Class identity enters only through a
//! severity factor: the central dark "ventricle" grows with severity and a
//! rim of the outer "cortex" erodes with it. Background voxels are exactly
//! zero, which starves boundary slices of entropy.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::volume::{Label, Volume, Voxels};

/// Brain ellipsoid semi-axes as fractions of (z, y, x) extents.
const BRAIN_AX: (f32, f32, f32) = (0.38, 0.42, 0.42);
/// Ventricle semi-axes before severity scaling.
const VENT_AX: (f32, f32, f32) = (0.10, 0.14, 0.12);
/// Intensity of fluid inside the ventricle.
const VENT_LEVEL: f32 = 0.12;
/// Rim width eroded per unit severity, in normalized brain radius.
const RING_WIDTH: f32 = 0.06;
/// Peak darkening inside the eroded rim.
const RING_DEPTH: f32 = 0.45;
/// Uniform noise half-width applied inside the brain mask.
const NOISE: f32 = 0.03;

struct Sinusoid {
    amp: f32,
    freq: (f32, f32, f32),
    phase: f32,
}

impl Sinusoid {
    fn sample(rng: &mut ChaCha8Rng, amp_lo: f32, amp_hi: f32) -> Self {
        Sinusoid {
            amp: rng.gen_range(amp_lo..amp_hi),
            freq: (
                rng.gen_range(1..=3) as f32,
                rng.gen_range(1..=3) as f32,
                rng.gen_range(1..=3) as f32,
            ),
            phase: rng.gen_range(0.0..std::f32::consts::TAU),
        }
    }

    fn eval(&self, pz: f32, py: f32, px: f32) -> f32 {
        let arg = std::f32::consts::TAU
            * (self.freq.0 * pz + self.freq.1 * py + self.freq.2 * px)
            + self.phase;
        self.amp * arg.sin()
    }
}

/// Normalized squared ellipsoid radius at centered coordinates.
#[inline]
fn rho2(qz: f32, qy: f32, qx: f32, az: f32, ay: f32, ax: f32) -> f32 {
    let (a, b, c) = (qz / az, qy / ay, qx / ax);
    a * a + b * b + c * c
}

pub fn synth_generate(label: Label, subject_seed: u64, dims: (usize, usize, usize)) -> Result<Volume> {
    let (z, y, x) = dims;
    if z < 16 || y < 16 || x < 16 {
        return Err(Error::Config(format!("synth dims {dims:?} must be at least 16 per axis")));
    }
    let sev = label.severity();
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);

    // Two displacement sinusoids per axis; fixed draw order keeps the
    // volume a pure function of the seed.
    let warp: Vec<[Sinusoid; 2]> = (0..3)
        .map(|_| [Sinusoid::sample(&mut rng, 0.004, 0.02), Sinusoid::sample(&mut rng, 0.004, 0.02)])
        .collect();
    let tex1 = Sinusoid::sample(&mut rng, 0.07, 0.11);
    let tex2 = Sinusoid::sample(&mut rng, 0.04, 0.07);
    let base_level = rng.gen_range(0.58..0.66);

    let vent = (VENT_AX.0 * sev, VENT_AX.1 * sev, VENT_AX.2 * sev);
    let ring_lo = 1.0 - RING_WIDTH * sev;

    let mut voxels = vec![0u8; z * y * x];
    let mut i = 0;
    for zi in 0..z {
        let pz = (zi as f32 + 0.5) / z as f32;
        for yi in 0..y {
            let py = (yi as f32 + 0.5) / y as f32;
            for xi in 0..x {
                let px = (xi as f32 + 0.5) / x as f32;
                let dz = warp[0][0].eval(pz, py, px) + warp[0][1].eval(pz, py, px);
                let dy = warp[1][0].eval(pz, py, px) + warp[1][1].eval(pz, py, px);
                let dx = warp[2][0].eval(pz, py, px) + warp[2][1].eval(pz, py, px);
                let qz = pz - 0.5 + dz;
                let qy = py - 0.5 + dy;
                let qx = px - 0.5 + dx;

                let rb = rho2(qz, qy, qx, BRAIN_AX.0, BRAIN_AX.1, BRAIN_AX.2).sqrt();
                if rb > 1.0 {
                    i += 1;
                    continue;
                }

                let mut v = base_level + tex1.eval(pz, py, px) + tex2.eval(px, pz, py);

                // Rim erosion, ramping from the inner edge of the ring.
                if rb > ring_lo {
                    let t = (rb - ring_lo) / (1.0 - ring_lo);
                    v *= 1.0 - RING_DEPTH * t;
                }

                // Ventricle: smooth blend to fluid level near the surface.
                let rv = rho2(qz, qy, qx, vent.0, vent.1, vent.2).sqrt();
                let wv = 1.0 / (1.0 + ((rv - 1.0) / 0.04).exp());
                v = v * (1.0 - wv) + VENT_LEVEL * wv;

                v += rng.gen_range(-NOISE..NOISE);
                voxels[i] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                i += 1;
            }
        }
    }

    Volume::new(format!("synth{subject_seed:08x}"), label, dims, Voxels::U8(voxels))
}

/// Mean intensity over the undeformed ventricle region at the largest
/// (most severe) scaling. Severity ordering shows up here: more severe
/// classes darken more of this fixed region.
pub fn ventricle_region_mean(v: &Volume) -> f64 {
    let (z, y, x) = v.dims;
    let worst = Label::Ad.severity();
    let ax = (VENT_AX.0 * worst, VENT_AX.1 * worst, VENT_AX.2 * worst);
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let data = match &v.voxels {
        Voxels::U8(d) => d,
        Voxels::F32(_) => return f64::NAN,
    };
    let mut i = 0;
    for zi in 0..z {
        let qz = (zi as f32 + 0.5) / z as f32 - 0.5;
        for yi in 0..y {
            let qy = (yi as f32 + 0.5) / y as f32 - 0.5;
            for xi in 0..x {
                let qx = (xi as f32 + 0.5) / x as f32 - 0.5;
                if rho2(qz, qy, qx, ax.0, ax.1, ax.2) <= 1.0 {
                    sum += data[i] as f64;
                    count += 1;
                }
                i += 1;
            }
        }
    }
    sum / count as f64
}
