//! Pixel grids of material identifiers and their binary file format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CrossSection, Material};

/// Hard-labelled material image. Row 0 is the top of the domain (stator side).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub width_px: usize,
    pub height_px: usize,
    pub mm_per_px_x: f64,
    pub mm_per_px_y: f64,
    /// Row-major material identifiers.
    pub materials: Vec<u8>,
    /// Row-major magnetization direction planes `(x, y)`.
    pub magnet_dir: Option<(Vec<f64>, Vec<f64>)>,
}

impl PixelGrid {
    pub fn uniform(width_px: usize, height_px: usize, width_mm: f64, height_mm: f64, m: Material) -> Self {
        PixelGrid {
            width_px,
            height_px,
            mm_per_px_x: width_mm / width_px as f64,
            mm_per_px_y: height_mm / height_px as f64,
            materials: vec![m.id(); width_px * height_px],
            magnet_dir: None,
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width_px + col
    }

    #[inline]
    pub fn material(&self, row: usize, col: usize) -> Material {
        Material::from_id(self.materials[self.idx(row, col)]).unwrap_or(Material::Air)
    }

    pub fn domain_width_mm(&self) -> f64 {
        self.mm_per_px_x * self.width_px as f64
    }

    pub fn domain_height_mm(&self) -> f64 {
        self.mm_per_px_y * self.height_px as f64
    }

    pub fn pixel_area_mm2(&self) -> f64 {
        self.mm_per_px_x * self.mm_per_px_y
    }

    pub fn count(&self, m: Material) -> usize {
        let id = m.id();
        self.materials.iter().filter(|&&v| v == id).count()
    }

    pub fn fraction(&self, m: Material) -> f64 {
        self.count(m) as f64 / self.materials.len() as f64
    }

    /// Row index whose centre lies closest to height `y_mm` (measured from the bottom).
    pub fn row_at(&self, y_mm: f64) -> usize {
        let r = ((self.domain_height_mm() - y_mm) / self.mm_per_px_y - 0.5).round();
        (r.max(0.0) as usize).min(self.height_px - 1)
    }

    pub fn without_dir(&self) -> PixelGrid {
        PixelGrid {
            magnet_dir: None,
            ..self.clone()
        }
    }

    /// Left-right mirror image; magnet x-directions are negated.
    pub fn mirrored(&self) -> PixelGrid {
        let (w, h) = (self.width_px, self.height_px);
        let flip = |v: &[f64], sign: f64| {
            let mut out = vec![0.0; v.len()];
            for r in 0..h {
                for c in 0..w {
                    out[r * w + c] = sign * v[r * w + (w - 1 - c)];
                }
            }
            out
        };
        let mut materials = vec![0u8; self.materials.len()];
        for r in 0..h {
            for c in 0..w {
                materials[r * w + c] = self.materials[r * w + (w - 1 - c)];
            }
        }
        PixelGrid {
            materials,
            magnet_dir: self.magnet_dir.as_ref().map(|(dx, dy)| (flip(dx, -1.0), flip(dy, 1.0))),
            ..self.clone()
        }
    }

    /// Checks the identifier range and the magnet-direction invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.width_px * self.height_px;
        if self.materials.len() != n {
            return Err(Error::Raster(format!("expected {n} material bytes, got {}", self.materials.len())));
        }
        if let Some(bad) = self.materials.iter().find(|&&v| v > 3) {
            return Err(Error::Raster(format!("material identifier {bad} out of range")));
        }
        if let Some((dx, dy)) = &self.magnet_dir {
            if dx.len() != n || dy.len() != n {
                return Err(Error::Raster("magnet direction plane size mismatch".into()));
            }
            for i in 0..n {
                let norm = (dx[i] * dx[i] + dy[i] * dy[i]).sqrt();
                let magnet = self.materials[i] == Material::Magnet.id();
                if magnet && (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Raster(format!("magnet pixel {i} has direction norm {norm}")));
                }
                if !magnet && norm != 0.0 {
                    return Err(Error::Raster(format!("non-magnet pixel {i} has a direction")));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.materials.len();
        let mut out = Vec::with_capacity(4 + 8 + 16 + n + 1 + if self.magnet_dir.is_some() { 16 * n } else { 0 });
        out.extend_from_slice(b"PXG1");
        out.extend_from_slice(&(self.width_px as u32).to_le_bytes());
        out.extend_from_slice(&(self.height_px as u32).to_le_bytes());
        out.extend_from_slice(&self.mm_per_px_x.to_le_bytes());
        out.extend_from_slice(&self.mm_per_px_y.to_le_bytes());
        out.extend_from_slice(&self.materials);
        match &self.magnet_dir {
            Some((dx, dy)) => {
                out.push(1);
                for v in dx.iter().chain(dy.iter()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated grid header".into()))?;
        if &magic != b"PXG1" {
            return Err(Error::Format("missing PXG1 magic".into()));
        }
        let width_px = read_u32(&mut r)? as usize;
        let height_px = read_u32(&mut r)? as usize;
        let mm_per_px_x = read_f64(&mut r)?;
        let mm_per_px_y = read_f64(&mut r)?;
        let n = width_px
            .checked_mul(height_px)
            .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
        if r.len() < n + 1 {
            return Err(Error::Format("truncated material plane".into()));
        }
        let materials = r[..n].to_vec();
        let flag = r[n];
        r = &r[n + 1..];
        let magnet_dir = match flag {
            0 => None,
            1 => {
                if r.len() < 16 * n {
                    return Err(Error::Format("truncated magnet direction planes".into()));
                }
                let mut planes = (Vec::with_capacity(n), Vec::with_capacity(n));
                for i in 0..2 * n {
                    let v = f64::from_le_bytes(r[8 * i..8 * i + 8].try_into().unwrap());
                    if i < n {
                        planes.0.push(v);
                    } else {
                        planes.1.push(v);
                    }
                }
                r = &r[16 * n..];
                Some(planes)
            }
            f => return Err(Error::Format(format!("bad magnet-direction flag {f}"))),
        };
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        let grid = PixelGrid {
            width_px,
            height_px,
            mm_per_px_x,
            mm_per_px_y,
            materials,
            magnet_dir,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        PixelGrid::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated grid header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated grid header".into()))?;
    Ok(f64::from_le_bytes(b))
}

/// Samples the cross-section at pixel centres.
pub fn rasterize(cs: &CrossSection, width_px: usize, height_px: usize) -> Result<PixelGrid> {
    if width_px < 8 || height_px < 8 {
        return Err(Error::Raster(format!("grid {width_px}x{height_px} below the 8x8 minimum")));
    }
    let hx = cs.width_mm / width_px as f64;
    let hy = cs.height_mm / height_px as f64;
    let n = width_px * height_px;
    let mut materials = vec![Material::Air.id(); n];
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    for region in &cs.regions {
        let poly = &region.polygon;
        if poly.len() < 3 {
            continue;
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &[x, y] in poly {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        // column range whose centres fall in [x0, x1]
        let c_lo = ((x0 / hx - 0.5).ceil().max(0.0)) as usize;
        let c_hi = ((x1 / hx - 0.5).floor()).min(width_px as f64 - 1.0);
        let r_lo = (((cs.height_mm - y1) / hy - 0.5).ceil().max(0.0)) as usize;
        let r_hi = (((cs.height_mm - y0) / hy - 0.5).floor()).min(height_px as f64 - 1.0);
        if c_hi < 0.0 || r_hi < 0.0 {
            continue;
        }
        let (c_hi, r_hi) = (c_hi as usize, r_hi as usize);
        let (ddx, ddy) = region.magnet_direction.map_or((0.0, 0.0), |[a, b]| (a, b));
        for r in r_lo..=r_hi {
            let y = cs.height_mm - (r as f64 + 0.5) * hy;
            for c in c_lo..=c_hi {
                let x = (c as f64 + 0.5) * hx;
                if point_in_polygon(x, y, poly) {
                    let i = r * width_px + c;
                    materials[i] = region.material.id();
                    if region.material == Material::Magnet {
                        dx[i] = ddx;
                        dy[i] = ddy;
                    } else {
                        dx[i] = 0.0;
                        dy[i] = 0.0;
                    }
                }
            }
        }
    }
    Ok(PixelGrid {
        width_px,
        height_px,
        mm_per_px_x: hx,
        mm_per_px_y: hy,
        materials,
        magnet_dir: Some((dx, dy)),
    })
}

/// Even-odd crossing test.
pub fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn precision(domain_mm: f64, pixels: usize) -> f64 {
    domain_mm / pixels as f64
}

pub fn feature_pixel_extent(range_mm: f64, precision_mm_per_px: f64) -> usize {
    (range_mm / precision_mm_per_px).ceil() as usize
}

// Majority-vote tie order: Magnet > Copper > Metal > Air.
const TIE_PRIORITY: [u8; 4] = [0, 1, 3, 2];

/// Block majority downsampling of material tags.
pub fn downsample_tags(grid: &PixelGrid, factor: usize) -> Result<PixelGrid> {
    if factor == 0 || grid.width_px % factor != 0 || grid.height_px % factor != 0 {
        return Err(Error::Raster(format!(
            "factor {factor} does not divide {}x{}",
            grid.width_px, grid.height_px
        )));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (w, h) = (grid.width_px / factor, grid.height_px / factor);
    let mut materials = vec![0u8; w * h];
    let mut dirs = grid.magnet_dir.as_ref().map(|_| (vec![0.0; w * h], vec![0.0; w * h]));
    for r in 0..h {
        for c in 0..w {
            let mut counts = [0usize; 4];
            let (mut sx, mut sy) = (0.0, 0.0);
            let mut first_dir = None;
            for rr in r * factor..(r + 1) * factor {
                for cc in c * factor..(c + 1) * factor {
                    let i = grid.idx(rr, cc);
                    counts[grid.materials[i].min(3) as usize] += 1;
                    if let Some((dx, dy)) = &grid.magnet_dir {
                        sx += dx[i];
                        sy += dy[i];
                        if first_dir.is_none() && grid.materials[i] == Material::Magnet.id() {
                            first_dir = Some((dx[i], dy[i]));
                        }
                    }
                }
            }
            let best = TIE_PRIORITY
                .iter()
                .copied()
                .max_by_key(|&m| (counts[m as usize], TIE_PRIORITY.iter().position(|&p| p == m).unwrap()))
                .unwrap();
            let o = r * w + c;
            materials[o] = best;
            if let Some((ox, oy)) = dirs.as_mut() {
                if best == Material::Magnet.id() {
                    let norm = (sx * sx + sy * sy).sqrt();
                    let (ux, uy) = if norm > 1e-12 {
                        (sx / norm, sy / norm)
                    } else {
                        first_dir.unwrap_or((0.0, 1.0))
                    };
                    ox[o] = ux;
                    oy[o] = uy;
                }
            }
        }
    }
    Ok(PixelGrid {
        width_px: w,
        height_px: h,
        mm_per_px_x: grid.mm_per_px_x * factor as f64,
        mm_per_px_y: grid.mm_per_px_y * factor as f64,
        materials,
        magnet_dir: dirs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_template, polygon_area, Region, TemplateKind};
    use proptest::prelude::*;

    #[test]
    fn full_cover_and_background() {
        let mut cs = CrossSection::empty(50.0, 79.0);
        let g = rasterize(&cs, 16, 24).unwrap();
        assert!(g.materials.iter().all(|&m| m == 0));
        cs.regions.push(Region::rect(0.0, 0.0, 50.0, 79.0, Material::Metal));
        let g = rasterize(&cs, 16, 24).unwrap();
        assert!(g.materials.iter().all(|&m| m == 1));
        g.validate().unwrap();
    }

    #[test]
    fn left_half_magnet_count() {
        let mut cs = CrossSection::empty(40.0, 30.0);
        cs.regions.push(Region::magnet(vec![[0.0, 0.0], [20.0, 0.0], [20.0, 30.0], [0.0, 30.0]], [1.0, 0.0]));
        let g = rasterize(&cs, 64, 48).unwrap();
        assert_eq!(g.count(Material::Magnet), 64 * 48 / 2);
        assert!(g.material(0, 31) == Material::Magnet && g.material(0, 32) == Material::Air);
        g.validate().unwrap();
    }

    #[test]
    fn too_small_grid_is_error() {
        assert!(rasterize(&CrossSection::empty(1.0, 1.0), 7, 8).is_err());
    }

    #[test]
    fn row_zero_is_top() {
        let mut cs = CrossSection::empty(10.0, 10.0);
        cs.regions.push(Region::rect(0.0, 5.0, 10.0, 10.0, Material::Copper));
        let g = rasterize(&cs, 8, 8).unwrap();
        assert_eq!(g.material(0, 0), Material::Copper);
        assert_eq!(g.material(7, 0), Material::Air);
    }

    #[test]
    fn table_precisions() {
        assert!((precision(50.0, 136) - 0.3676).abs() < 1e-4);
        assert!((precision(50.0, 272) - 0.1838).abs() < 1e-4);
        assert!((precision(50.0, 544) - 0.0919).abs() < 1e-4);
        assert_eq!(feature_pixel_extent(9.4859 - 7.1938, 0.3676), 7);
        assert_eq!(feature_pixel_extent(155.3637 - 141.699, 0.3676), 38);
        assert_eq!(feature_pixel_extent(0.6367, 0.0919), 7);
    }

    #[test]
    fn downsample_identity_uniform_and_checkerboard() {
        let g = PixelGrid::uniform(8, 8, 8.0, 8.0, Material::Metal);
        assert_eq!(downsample_tags(&g, 1).unwrap(), g);
        let d = downsample_tags(&g, 2).unwrap();
        assert_eq!((d.width_px, d.height_px), (4, 4));
        assert!(d.materials.iter().all(|&m| m == 1));

        let mut cb = PixelGrid::uniform(8, 8, 8.0, 8.0, Material::Air);
        let dx = vec![0.0; 64];
        let mut dy = vec![0.0; 64];
        for r in 0..8 {
            for c in 0..8 {
                if (r + c) % 2 == 0 {
                    cb.materials[r * 8 + c] = 2;
                    dy[r * 8 + c] = 1.0;
                }
            }
        }
        cb.magnet_dir = Some((dx, dy));
        let d = downsample_tags(&cb, 2).unwrap();
        assert!(d.materials.iter().all(|&m| m == 2));
        d.validate().unwrap();
        assert!(downsample_tags(&cb, 3).is_err());
    }

    #[test]
    fn tie_priority_copper_over_metal() {
        let mut g = PixelGrid::uniform(8, 8, 8.0, 8.0, Material::Metal);
        for c in 0..8 {
            g.materials[c] = Material::Copper.id();
        }
        let d = downsample_tags(&g, 2).unwrap();
        assert_eq!(d.material(0, 0), Material::Copper);
    }

    #[test]
    fn pxg1_round_trip_is_bit_exact() {
        let t = build_template(TemplateKind::FullPoleVc);
        let cs = t.build_cross_section(&t.midpoint()).unwrap();
        let g = rasterize(&cs, 64, 80).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"PXG1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 64);
        let back = PixelGrid::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, g);
        let plain = g.without_dir();
        assert_eq!(PixelGrid::from_bytes(&plain.to_bytes()).unwrap(), plain);
        assert!(PixelGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pxg");
        g.write_file(&path).unwrap();
        assert_eq!(PixelGrid::read_file(&path).unwrap(), g);
    }

    #[test]
    fn mirror_is_involution() {
        let t = build_template(TemplateKind::HalfPoleV);
        let g = rasterize(&t.build_cross_section(&t.midpoint()).unwrap(), 40, 64).unwrap();
        assert_eq!(g.mirrored().mirrored(), g);
    }

    fn random_design(kind: TemplateKind, u: &[f64]) -> Option<CrossSection> {
        let t = build_template(kind);
        let p = t.design_from_unit(&u[..t.n_params()]).ok()?;
        t.build_cross_section(&p).ok()
    }

    fn exact_fraction(cs: &CrossSection, m: Material) -> f64 {
        // regions of one material never overlap after painting only when
        // nothing paints over them; magnets are painted after all pockets
        // and copper never touches the rotor, so their areas add up
        cs.regions.iter().filter(|r| r.material == m).map(|r| polygon_area(&r.polygon)).sum::<f64>()
            / (cs.width_mm * cs.height_mm)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn refinement_agrees_after_downsampling(u in proptest::collection::vec(0.0f64..1.0, 12)) {
            for kind in [TemplateKind::HalfPoleV, TemplateKind::FullPoleVc] {
                if let Some(cs) = random_design(kind, &u) {
                    let coarse = rasterize(&cs, 64, 80).unwrap();
                    let fine = rasterize(&cs, 128, 160).unwrap();
                    let down = downsample_tags(&fine, 2).unwrap();
                    down.validate().unwrap();
                    let same = coarse.materials.iter().zip(&down.materials).filter(|(a, b)| a == b).count();
                    prop_assert!(same as f64 >= 0.95 * coarse.materials.len() as f64);
                }
            }
        }

        #[test]
        fn precision_reconstructs_domain(d in 1.0f64..500.0, n in 1usize..4096) {
            prop_assert!((precision(d, n) * n as f64 - d).abs() <= 1e-12 * d);
        }

        #[test]
        fn rasterized_grids_are_valid(u in proptest::collection::vec(0.0f64..1.0, 12)) {
            if let Some(cs) = random_design(TemplateKind::FullPoleVc, &u) {
                let g = rasterize(&cs, 37, 45).unwrap();
                g.validate().unwrap();
                prop_assert_eq!(rasterize(&cs, 37, 45).unwrap(), g);
            }
        }
    }

    #[test]
    fn refinement_is_monotone_on_average() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut err_r, mut err_2r, mut n) = (0.0, 0.0, 0);
        while n < 20 {
            let u: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
            let Some(cs) = random_design(TemplateKind::FullPoleVc, &u) else { continue };
            for m in [Material::Magnet, Material::Copper] {
                let exact = exact_fraction(&cs, m);
                err_r += (rasterize(&cs, 49, 64).unwrap().fraction(m) - exact).abs();
                err_2r += (rasterize(&cs, 98, 128).unwrap().fraction(m) - exact).abs();
            }
            n += 1;
        }
        assert!(err_2r < err_r, "{err_2r} !< {err_r}");
    }
}
