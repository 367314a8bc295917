//! Procedural outfit sprites.
//!
//! Each sprite is a layered figure: background, lower body, arms and torso,
//! then the garment, then head and hair on top. Everything except the garment
//! depends only on the body (seed and gender), so two sprites sharing a body
//! differ only where either garment is visible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attributes::{Attributes, Category, Color, Gender, Sleeve};
use crate::film::ImageTensor;

type Rgb = [f32; 3];

/// Seed-derived appearance of everything but the garment.
#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub gender: Gender,
    skin: Rgb,
    hair: Rgb,
    pants: Rgb,
    bg_top: Rgb,
    bg_bottom: Rgb,
    stripe_freq: f32,
    stripe_slope: f32,
    stripe_phase: f32,
    offset: f32,
    scale: f32,
    noise_key: u64,
}

/// Garment-defining attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Garment {
    pub sleeve: Sleeve,
    pub color: Color,
    pub category: Category,
}

impl Garment {
    pub fn of(a: &Attributes) -> Self {
        Self {
            sleeve: a.sleeve,
            color: a.color,
            category: a.category,
        }
    }
}

pub fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue (degrees), saturation and value of an RGB triple in `[0, 1]`.
pub fn rgb_to_hsv(c: Rgb) -> (f32, f32, f32) {
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == c[0] {
        60.0 * ((c[1] - c[2]) / d).rem_euclid(6.0)
    } else if max == c[1] {
        60.0 * ((c[2] - c[0]) / d + 2.0)
    } else {
        60.0 * ((c[0] - c[1]) / d + 4.0)
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Body seed of sample `id` in a dataset generated from `seed`.
pub fn body_seed(seed: u64, id: usize) -> u64 {
    splitmix(splitmix(seed) ^ (id as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

impl Body {
    pub fn from_seed(seed: u64, gender: Gender) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skin = hsv(
            rng.gen_range(18.0..32.0),
            rng.gen_range(0.30..0.50),
            rng.gen_range(0.60..0.95),
        );
        let hair = hsv(
            rng.gen_range(15.0..40.0),
            rng.gen_range(0.3..0.6),
            rng.gen_range(0.08..0.35),
        );
        let pants = hsv(
            rng.gen_range(0.0..360.0),
            rng.gen_range(0.0..0.2),
            rng.gen_range(0.15..0.45),
        );
        let bg_hue = rng.gen_range(0.0..360.0);
        let bg_top = hsv(bg_hue, rng.gen_range(0.0..0.15), rng.gen_range(0.70..0.95));
        let bg_bottom = hsv(
            bg_hue + rng.gen_range(-30.0..30.0),
            rng.gen_range(0.0..0.15),
            rng.gen_range(0.55..0.85),
        );
        Self {
            gender,
            skin,
            hair,
            pants,
            bg_top,
            bg_bottom,
            stripe_freq: rng.gen_range(10.0..30.0),
            stripe_slope: rng.gen_range(-1.0..1.0),
            stripe_phase: rng.gen_range(0.0..std::f32::consts::TAU),
            offset: rng.gen_range(-0.04..0.04),
            scale: rng.gen_range(0.94..1.04),
            noise_key: rng.gen(),
        }
    }

    fn shoulder(&self) -> f32 {
        match self.gender {
            Gender::Lady => 0.22,
            Gender::Man => 0.25,
        }
    }

    fn waist(&self) -> f32 {
        match self.gender {
            Gender::Lady => 0.17,
            Gender::Man => 0.20,
        }
    }

    fn background(&self, x: f32, y: f32, px: usize) -> Rgb {
        let t = (y / 2.0).clamp(0.0, 1.0);
        let stripe = 0.03 * (self.stripe_freq * (x + self.stripe_slope * y) + self.stripe_phase).sin();
        let noise = (splitmix(self.noise_key ^ px as u64) % 1000) as f32 / 1000.0 * 0.04 - 0.02;
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = self.bg_top[k] * (1.0 - t) + self.bg_bottom[k] * t + stripe + noise;
        }
        out
    }
}

/// Distance from `p` to the segment `a`–`b`, and the projection parameter.
fn segment(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> (f32, f32) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt(), t)
}

const TORSO_TOP: f32 = 0.46;
const WAIST_Y: f32 = 1.04;

fn torso_half_width(body: &Body, y: f32) -> f32 {
    let t = ((y - TORSO_TOP) / (WAIST_Y - TORSO_TOP)).clamp(0.0, 1.0);
    body.shoulder() * (1.0 - t) + body.waist() * t
}

fn arm_segments(body: &Body) -> [((f32, f32), (f32, f32)); 2] {
    let s = body.shoulder();
    [
        ((0.5 - s, 0.50), (0.5 - s - 0.06, 1.15)),
        ((0.5 + s, 0.50), (0.5 + s + 0.06, 1.15)),
    ]
}

/// Garment coverage at figure coordinates.
fn garment_at(body: &Body, g: &Garment, x: f32, y: f32) -> bool {
    let dxc = (x - 0.5).abs();
    let in_torso = |y_end: f32| y >= TORSO_TOP && y <= y_end && dxc <= torso_half_width(body, y) + 0.01;
    let body_part = match g.category {
        Category::Blouse => {
            let v_neck = y < TORSO_TOP + 0.16 && dxc < 0.07 * (1.0 - (y - TORSO_TOP) / 0.16);
            in_torso(WAIST_Y + 0.06) && !v_neck
        }
        Category::TShirt => {
            y >= TORSO_TOP
                && y <= WAIST_Y + 0.04
                && dxc <= body.shoulder() + 0.01
                && !(y < TORSO_TOP + 0.03 && dxc < 0.06)
        }
        Category::Dress => {
            let skirt = y > WAIST_Y && y <= 1.50 && {
                let t = (y - WAIST_Y) / (1.50 - WAIST_Y);
                dxc <= (body.waist() + 0.01) * (1.0 - t) + 0.27 * t
            };
            in_torso(WAIST_Y) || skirt
        }
        Category::Romper => {
            let shorts = (1.00..=1.30).contains(&y) && dxc <= 0.16 && !(y > 1.16 && dxc < 0.015);
            in_torso(WAIST_Y) || shorts
        }
    };
    if body_part {
        return true;
    }
    let reach = match g.sleeve {
        Sleeve::Sleeveless => return false,
        Sleeve::Short => 0.32,
        Sleeve::Long => 0.93,
    };
    arm_segments(body).iter().any(|&(a, b)| {
        let (d, t) = segment((x, y), a, b);
        d <= 0.055 && t <= reach && y >= TORSO_TOP
    })
}

/// Render one sprite at `h×w`. Returns the image and its garment mask.
pub fn render(body: &Body, garment: &Garment, h: usize, w: usize) -> (ImageTensor, Vec<bool>) {
    let plane = h * w;
    let mut values = vec![0.0f32; 3 * plane];
    let mut mask = vec![false; plane];
    let garment_rgb = hsv(garment.color.hue(), 0.85, 0.85);
    let dark = [0.10, 0.09, 0.09];
    let arms = arm_segments(body);
    for py in 0..h {
        for px in 0..w {
            let gx = (px as f32 + 0.5) / w as f32;
            let gy = 2.0 * (py as f32 + 0.5) / h as f32;
            // figure coordinates
            let x = (gx - 0.5 - body.offset) / body.scale + 0.5;
            let y = (gy - 1.0) / body.scale + 1.0;
            let dxc = (x - 0.5).abs();

            let mut c = body.background(gx, gy, py * w + px);
            let legs = (1.02..=1.84).contains(&y) && (0.02..=0.15).contains(&dxc);
            let pelvis = (1.0..=1.12).contains(&y) && dxc <= 0.15;
            if legs || pelvis {
                c = body.pants;
            }
            if (1.84..=1.92).contains(&y) && (0.02..=0.16).contains(&dxc) {
                c = dark;
            }
            if y >= TORSO_TOP && y <= WAIST_Y + 0.02 && dxc <= torso_half_width(body, y) {
                c = body.skin;
            }
            for &(a, b) in &arms {
                if segment((x, y), a, b).0 <= 0.043 || segment((x, y), b, b).0 <= 0.05 {
                    c = body.skin;
                }
            }
            if (0.36..=0.48).contains(&y) && dxc <= 0.045 {
                c = body.skin;
            }

            if garment_at(body, garment, x, y) {
                let shade = 1.0 - 0.15 * (dxc / 0.3).min(1.0);
                c = garment_rgb.map(|v| v * shade);
                mask[py * w + px] = true;
            }

            let head = ((x - 0.5) / 1.0).powi(2) + (y - 0.26).powi(2) <= 0.12f32.powi(2);
            let cap = ((x - 0.5).powi(2) + (y - 0.25).powi(2) <= 0.135f32.powi(2)) && y < 0.2;
            let strands = body.gender == Gender::Lady
                && (0.20..=0.56).contains(&y)
                && (0.095..=0.165).contains(&dxc);
            if head {
                c = body.skin;
                let eye = ((dxc - 0.045).powi(2) + (y - 0.25).powi(2)) <= 0.018f32.powi(2);
                if eye {
                    c = dark;
                }
            }
            if cap || strands {
                c = body.hair;
            }
            if (head || cap || strands) && mask[py * w + px] {
                mask[py * w + px] = false;
            }

            for k in 0..3 {
                values[k * plane + py * w + px] = c[k].clamp(0.0, 1.0) * 2.0 - 1.0;
            }
        }
    }
    (ImageTensor { c: 3, h, w, values }, mask)
}

/// Balanced per-slot label lists: every value appears `⌊n/k⌋` or `⌈n/k⌉`
/// times, shuffled independently per slot.
pub fn balanced_attributes(n: usize, rng: &mut ChaCha8Rng) -> Vec<Attributes> {
    fn column(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut extra: Vec<usize> = (0..k).collect();
        extra.shuffle(rng);
        let mut v: Vec<usize> = (0..n / k * k).map(|i| i % k).collect();
        v.extend(extra.into_iter().take(n % k));
        v.shuffle(rng);
        v
    }
    let g = column(n, Gender::ALL.len(), rng);
    let s = column(n, Sleeve::ALL.len(), rng);
    let c = column(n, Color::ALL.len(), rng);
    let k = column(n, Category::ALL.len(), rng);
    (0..n)
        .map(|i| Attributes {
            gender: Gender::ALL[g[i]],
            sleeve: Sleeve::ALL[s[i]],
            color: Color::ALL[c[i]],
            category: Category::ALL[k[i]],
        })
        .collect()
}
