//! Coarse-to-fine block-matching flow.
//!
//! Both images are converted to luma and reduced into a binomial pyramid.
//! The coarsest level is matched with an exhaustive SSD search; every finer
//! level re-centres a small search window on the upsampled flow of the level
//! above. Integer matches get a parabolic sub-pixel correction and each
//! level is cleaned with a 3x3 component-wise median.

use rayon::prelude::*;

use super::FlowField;
use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dims, Grid, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineFlowParams {
    /// Maximum number of pyramid levels, including full resolution.
    pub levels: usize,
    /// Levels stop once the smaller side would drop below this.
    pub min_level_size: u32,
    /// Half-size of the square matching patch.
    pub patch_radius: i32,
    /// Search radius at the coarsest level.
    pub coarse_radius: i32,
    /// Search radius around the propagated estimate at finer levels.
    pub refine_radius: i32,
}

impl Default for BaselineFlowParams {
    fn default() -> Self {
        Self { levels: 4, min_level_size: 16, patch_radius: 3, coarse_radius: 4, refine_radius: 2 }
    }
}

impl BaselineFlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.patch_radius < 1 || self.coarse_radius < 1 || self.refine_radius < 1 {
            return Err(Error::param("flow levels and radii must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(img: &ImageBuffer) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect();
        Self { w: w as usize, h: h as usize, data }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = (0..5).map(|i| K[i] * self.at(x as isize + i as isize - 2, y as isize)).sum();
            }
        }
        let tmp = Plane { w: self.w, h: self.h, data: tmp };
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w2 * h2);
        for y in 0..h2 {
            for x in 0..w2 {
                data.push((0..5).map(|i| K[i] * tmp.at(2 * x as isize, 2 * y as isize + i as isize - 2)).sum());
            }
        }
        Plane { w: w2, h: h2, data }
    }
}

fn pyramid(base: Plane, params: &BaselineFlowParams) -> Vec<Plane> {
    let mut levels = vec![base];
    while levels.len() < params.levels {
        let last = levels.last().unwrap();
        if (last.w.min(last.h) / 2) < params.min_level_size as usize {
            break;
        }
        let next = last.downsample();
        levels.push(next);
    }
    levels
}

#[inline]
fn ssd(a: &Plane, b: &Plane, x: isize, y: isize, dx: isize, dy: isize, r: isize) -> f64 {
    let mut s = 0.0;
    let inside = x - r >= 0
        && y - r >= 0
        && x + r < a.w as isize
        && y + r < a.h as isize
        && x + dx - r >= 0
        && y + dy - r >= 0
        && x + dx + r < b.w as isize
        && y + dy + r < b.h as isize;
    if inside {
        for j in -r..=r {
            let ra = ((y + j) as usize) * a.w;
            let rb = ((y + j + dy) as usize) * b.w;
            for i in -r..=r {
                let d = a.data[ra + (x + i) as usize] - b.data[rb + (x + i + dx) as usize];
                s += d * d;
            }
        }
    } else {
        for j in -r..=r {
            for i in -r..=r {
                let d = a.at(x + i, y + j) - b.at(x + i + dx, y + j + dy);
                s += d * d;
            }
        }
    }
    s
}

#[inline]
fn parabola_offset(minus: f64, center: f64, plus: f64) -> f64 {
    let denom = minus - 2.0 * center + plus;
    if center == 0.0 || !(denom > 0.0) {
        return 0.0;
    }
    (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
}

fn match_level(a: &Plane, b: &Plane, pred_u: &[f64], pred_v: &[f64], radius: i32, patch: i32) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (a.w, a.h);
    let r = patch as isize;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut us = Vec::with_capacity(w);
            let mut vs = Vec::with_capacity(w);
            for x in 0..w {
                let i = y * w + x;
                let cu = pred_u[i].round() as isize;
                let cv = pred_v[i].round() as isize;
                let (xi, yi) = (x as isize, y as isize);
                // (cost, |step|^2, |d|^2) compared lexicographically
                let mut best: (f64, isize, isize, isize, isize) = (f64::INFINITY, 0, 0, cu, cv);
                for sy in -radius as isize..=radius as isize {
                    for sx in -radius as isize..=radius as isize {
                        let (du, dv) = (cu + sx, cv + sy);
                        let c = ssd(a, b, xi, yi, du, dv, r);
                        let step = sx * sx + sy * sy;
                        let mag = du * du + dv * dv;
                        let better = c < best.0 || (c == best.0 && (step < best.1 || (step == best.1 && mag < best.2)));
                        if better {
                            best = (c, step, mag, du, dv);
                        }
                    }
                }
                let (c0, _, _, du, dv) = best;
                let ox = parabola_offset(ssd(a, b, xi, yi, du - 1, dv, r), c0, ssd(a, b, xi, yi, du + 1, dv, r));
                let oy = parabola_offset(ssd(a, b, xi, yi, du, dv - 1, r), c0, ssd(a, b, xi, yi, du, dv + 1, r));
                us.push(du as f64 + ox);
                vs.push(dv as f64 + oy);
            }
            (us, vs)
        })
        .collect();
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for (ru, rv) in rows {
        u.extend(ru);
        v.extend(rv);
    }
    (u, v)
}

fn median3x3(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut win = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for j in -1isize..=1 {
                for i in -1isize..=1 {
                    let (xx, yy) = (x as isize + i, y as isize + j);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        win[n] = values[yy as usize * w + xx as usize];
                        n += 1;
                    }
                }
            }
            let s = &mut win[..n];
            s.sort_by(|a, b| a.total_cmp(b));
            out.push(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) });
        }
    }
    out
}

fn upsample(values: &[f64], w: usize, h: usize, w2: usize, h2: usize) -> Vec<f64> {
    let at =
        |x: isize, y: isize| values[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let (fx, fy) = (x as f64 * 0.5, y as f64 * 0.5);
            let (x0, y0) = (fx.floor() as isize, fy.floor() as isize);
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let v = (1.0 - ay) * ((1.0 - ax) * at(x0, y0) + ax * at(x0 + 1, y0))
                + ay * ((1.0 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
            out.push(2.0 * v);
        }
    }
    out
}

/// Flow from `a` to `b` with default parameters.
pub fn baseline_flow(a: &ImageBuffer, b: &ImageBuffer) -> Result<FlowField> {
    baseline_flow_with(a, b, &BaselineFlowParams::default())
}

/// Flow from `a` to `b`: `a(x) ~ b(x + flow(x))`. Bit-identical inputs
/// yield an exactly zero field.
pub fn baseline_flow_with(a: &ImageBuffer, b: &ImageBuffer, params: &BaselineFlowParams) -> Result<FlowField> {
    ensure_same_dims(a.dimensions(), b.dimensions())?;
    params.validate()?;
    let (w, h) = a.dimensions();
    if a.as_raw() == b.as_raw() {
        return Ok(FlowField::zeros(w, h));
    }
    let pa = pyramid(Plane::luma(a), params);
    let pb = pyramid(Plane::luma(b), params);
    let top = pa.len() - 1;
    let mut u = vec![0.0; pa[top].w * pa[top].h];
    let mut v = u.clone();
    for level in (0..=top).rev() {
        let (la, lb) = (&pa[level], &pb[level]);
        if level < top {
            let up = &pa[level + 1];
            u = upsample(&u, up.w, up.h, la.w, la.h);
            v = upsample(&v, up.w, up.h, la.w, la.h);
        }
        let radius = if level == top { params.coarse_radius } else { params.refine_radius };
        let (mu, mv) = match_level(la, lb, &u, &v, radius, params.patch_radius);
        u = median3x3(&mu, la.w, la.h);
        v = median3x3(&mv, la.w, la.h);
    }
    FlowField::new(Grid::from_vec(w, h, u)?, Grid::from_vec(w, h, v)?, Grid::new(w, h, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn textured(w: u32, h: u32, shift: f64) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - shift, y as f64);
            let v = 128.0
                + 45.0 * (x * 0.31 + y * 0.17).sin()
                + 35.0 * (x * 0.13 - y * 0.29).cos()
                + 25.0 * (x * 0.05 + y * 0.11).sin();
            let c = v.clamp(0.0, 255.0) as u8;
            Rgb([c, c, c])
        })
    }

    #[test]
    fn identical_images_give_exact_zero() {
        let a = textured(64, 48, 0.0);
        let f = baseline_flow(&a, &a).unwrap();
        assert!(f.du.iter().chain(f.dv.iter()).all(|&v| v == 0.0));
        assert!(f.valid.iter().all(|&v| v));
    }

    #[test]
    fn known_shift_is_recovered() {
        let a = textured(96, 72, 0.0);
        let b = textured(96, 72, 3.0);
        let f = baseline_flow(&a, &b).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for y in 8..64 {
            for x in 8..80 {
                let (u, v) = f.get(x, y).unwrap();
                err += ((u - 3.0).powi(2) + v * v).sqrt();
                n += 1;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 0.5, "mean endpoint error {mean}");
    }

    #[test]
    fn deterministic_across_runs() {
        let a = textured(64, 48, 0.0);
        let b = textured(64, 48, 1.7);
        assert_eq!(baseline_flow(&a, &b).unwrap(), baseline_flow(&a, &b).unwrap());
    }

    #[test]
    fn parabola_vertex() {
        // samples of (x - 0.25)^2 at -1, 0, 1
        let f = |x: f64| (x - 0.25f64).powi(2) + 1.0;
        assert!((parabola_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
        assert_eq!(parabola_offset(3.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn median_removes_isolated_outlier() {
        let mut v = vec![1.0; 25];
        v[12] = 100.0;
        let m = median3x3(&v, 5, 5);
        assert!(m.iter().all(|&x| x == 1.0));
    }
}
