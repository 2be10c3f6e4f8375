//! Linear magnetostatic field oracle on pixel grids.
//!
//! Unknown is the nodal vector potential `A` on the `(h+1) x (w+1)` node lattice
//! of a `w x h` cell grid. Top and bottom node rows are held at zero, the
//! lattice wraps around horizontally. Each interior node owns a control volume
//! made of the four adjacent cell quarters.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DesignVector, MachineTemplate, Material};
use crate::raster::{rasterize, PixelGrid};

pub const MU0: f64 = 4.0e-7 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialMap {
    pub air: f64,
    pub metal: f64,
    pub magnet: f64,
    pub copper: f64,
}

impl MaterialMap {
    pub fn get(&self, m: Material) -> f64 {
        match m {
            Material::Air => self.air,
            Material::Metal => self.metal,
            Material::Magnet => self.magnet,
            Material::Copper => self.copper,
        }
    }
}

fn default_nu_air() -> f64 {
    1.0 / MU0
}
fn default_nu_iron() -> f64 {
    1.0 / (MU0 * 1000.0)
}
fn default_nu_magnet() -> f64 {
    1.0 / (MU0 * 1.05)
}
fn default_remanence() -> f64 {
    1.2
}
fn default_j_amp() -> f64 {
    5.0e6
}
fn default_stack() -> f64 {
    0.1
}
fn default_pole_pairs() -> u32 {
    4
}
fn default_slots_in_domain() -> usize {
    6
}
fn default_spp() -> usize {
    2
}
fn default_prices() -> MaterialMap {
    MaterialMap {
        air: 0.0,
        metal: 2.0,
        magnet: 60.0,
        copper: 8.0,
    }
}
fn default_densities() -> MaterialMap {
    MaterialMap {
        air: 0.0,
        metal: 7650.0,
        magnet: 7500.0,
        copper: 8900.0,
    }
}

/// Material constants and machine scalars used by the oracle. Every field has
/// a default, so a JSON document only needs the values it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialPhysics {
    #[serde(default = "default_nu_air")]
    pub nu_air: f64,
    #[serde(default = "default_nu_iron")]
    pub nu_iron: f64,
    #[serde(default = "default_nu_magnet")]
    pub nu_magnet: f64,
    #[serde(default = "default_nu_air")]
    pub nu_copper: f64,
    #[serde(default = "default_remanence")]
    pub remanence_t: f64,
    /// Peak slot current density, A/m^2.
    #[serde(default = "default_j_amp")]
    pub j_amp: f64,
    #[serde(default = "default_stack")]
    pub stack_length_m: f64,
    #[serde(default = "default_pole_pairs")]
    pub pole_pairs: u32,
    #[serde(default = "default_slots_in_domain")]
    pub slots_in_domain: usize,
    #[serde(default = "default_spp")]
    pub slots_per_pole_per_phase: usize,
    #[serde(default = "default_prices")]
    pub prices_eur_per_kg: MaterialMap,
    #[serde(default = "default_densities")]
    pub densities_kg_per_m3: MaterialMap,
    /// Airgap sampling row. When absent it is derived from the template's
    /// always-air band.
    #[serde(default)]
    pub gap_row: Option<usize>,
}

impl Default for MaterialPhysics {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl MaterialPhysics {
    pub fn for_template(template: &MachineTemplate) -> Self {
        let f = template.fixed();
        MaterialPhysics {
            stack_length_m: f.stack_length_m,
            pole_pairs: f.pole_pairs,
            slots_in_domain: f.slots_in_domain as usize,
            slots_per_pole_per_phase: f.slots_per_pole_per_phase as usize,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nus = [self.nu_air, self.nu_iron, self.nu_magnet, self.nu_copper];
        if nus.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid("reluctivities must be positive".into()));
        }
        if self.nu_iron >= self.nu_air {
            return Err(Error::Invalid("iron reluctivity must be below air reluctivity".into()));
        }
        for map in [&self.prices_eur_per_kg, &self.densities_kg_per_m3] {
            if [map.air, map.metal, map.magnet, map.copper].iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Invalid("prices and densities must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: MaterialPhysics = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        MaterialPhysics::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn nu(&self, m: Material) -> f64 {
        match m {
            Material::Air => self.nu_air,
            Material::Metal => self.nu_iron,
            Material::Magnet => self.nu_magnet,
            Material::Copper => self.nu_copper,
        }
    }

    fn slot_phase_offset(&self, col: usize, width_px: usize) -> f64 {
        let n = self.slots_in_domain.max(1);
        let slot = ((col as f64 + 0.5) * n as f64 / width_px as f64).floor() as usize;
        let phase = (slot.min(n - 1) / self.slots_per_pole_per_phase.max(1)) % 3;
        phase as f64 * 2.0 * PI / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Excitation {
    pub electrical_angle_rad: f64,
    pub rotor_shift_px: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-9,
            max_iter: 20_000,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub width_px: usize,
    pub height_px: usize,
    /// Nodal potential, `(height_px + 1) x (width_px + 1)` row-major, Wb/m.
    pub a: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl FieldSolution {
    #[inline]
    pub fn at(&self, node_row: usize, node_col: usize) -> f64 {
        self.a[node_row * (self.width_px + 1) + node_col]
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }
}

/// Per-iteration trace of a conjugate-gradient run.
#[derive(Debug, Clone, Default)]
pub struct CgTrace {
    pub residual_norms: Vec<f64>,
    /// Quadratic energy `x'Kx/2 - b'x` of each iterate.
    pub energies: Vec<f64>,
}

/// Cell-wise description a field solve runs on. Built from a hard-labelled
/// grid, or by averaging square blocks of a finer grid so that sub-cell
/// geometry changes move the coefficients continuously.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub width: usize,
    pub height: usize,
    /// Cell size, metres.
    pub hx: f64,
    pub hy: f64,
    /// Reluctivity seen by x-directed flux (`B_x`).
    pub nu_x: Vec<f64>,
    /// Reluctivity seen by y-directed flux (`B_y`).
    pub nu_y: Vec<f64>,
    /// Magnetization, A/m.
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
    /// Copper weights: the cell current density at electrical angle `t` is
    /// `J_amp * (cos t * jc + sin t * js)`.
    pub jc: Vec<f64>,
    pub js: Vec<f64>,
    /// Cells made entirely of air.
    pub air: Vec<bool>,
}

impl Medium {
    pub fn from_grid(grid: &PixelGrid, phys: &MaterialPhysics) -> Result<Self> {
        Medium::homogenized(grid, 1, phys)
    }

    /// Averages `factor x factor` blocks. Reluctivity uses a laminate rule per
    /// flux direction: sub-pixels in series along the flux are averaged
    /// arithmetically, the resulting strands in parallel harmonically.
    pub fn homogenized(grid: &PixelGrid, factor: usize, phys: &MaterialPhysics) -> Result<Self> {
        if factor == 0 || grid.width_px % factor != 0 || grid.height_px % factor != 0 {
            return Err(Error::Raster(format!(
                "factor {factor} does not divide {}x{}",
                grid.width_px, grid.height_px
            )));
        }
        if grid.magnet_dir.is_none() && phys.remanence_t != 0.0 && grid.count(Material::Magnet) > 0 {
            return Err(Error::Invalid("grid lacks the magnet direction planes".into()));
        }
        let (w, h) = (grid.width_px / factor, grid.height_px / factor);
        let n = w * h;
        let m0 = phys.remanence_t * phys.nu_magnet;
        let phase: Vec<(f64, f64)> = (0..grid.width_px)
            .map(|c| {
                let phi = phys.slot_phase_offset(c, grid.width_px);
                (phi.cos(), phi.sin())
            })
            .collect();
        let mut med = Medium {
            width: w,
            height: h,
            hx: grid.mm_per_px_x * factor as f64 * 1e-3,
            hy: grid.mm_per_px_y * factor as f64 * 1e-3,
            nu_x: vec![0.0; n],
            nu_y: vec![0.0; n],
            mx: vec![0.0; n],
            my: vec![0.0; n],
            jc: vec![0.0; n],
            js: vec![0.0; n],
            air: vec![true; n],
        };
        let inv = 1.0 / (factor * factor) as f64;
        for r in 0..h {
            for c in 0..w {
                let o = r * w + c;
                let mut row_sum = vec![0.0; factor];
                let mut col_sum = vec![0.0; factor];
                for rr in r * factor..(r + 1) * factor {
                    for cc in c * factor..(c + 1) * factor {
                        let i = grid.idx(rr, cc);
                        let m = Material::from_id(grid.materials[i]).unwrap_or(Material::Air);
                        let nu = phys.nu(m);
                        row_sum[rr - r * factor] += nu;
                        col_sum[cc - c * factor] += nu;
                        match m {
                            Material::Air => {}
                            Material::Magnet => {
                                if let Some((dx, dy)) = &grid.magnet_dir {
                                    med.mx[o] += m0 * dx[i] * inv;
                                    med.my[o] += m0 * dy[i] * inv;
                                }
                            }
                            Material::Copper => {
                                med.jc[o] += phase[cc].0 * inv;
                                med.js[o] += phase[cc].1 * inv;
                            }
                            Material::Metal => {}
                        }
                        if m != Material::Air {
                            med.air[o] = false;
                        }
                    }
                }
                let k = factor as f64;
                let strands = |sums: &[f64]| k / sums.iter().map(|s| k / s).sum::<f64>();
                med.nu_x[o] = strands(&row_sum);
                med.nu_y[o] = strands(&col_sum);
            }
        }
        Ok(med)
    }

    /// Rolls the rotor band (rows strictly below `gap_row`) right by `shift` cells.
    pub fn shifted(&self, gap_row: usize, shift: usize) -> Medium {
        let w = self.width;
        let s = shift % w;
        if s == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        for r in (gap_row + 1)..self.height {
            let row = r * w;
            for c in 0..w {
                let src = row + (c + w - s) % w;
                let dst = row + c;
                out.nu_x[dst] = self.nu_x[src];
                out.nu_y[dst] = self.nu_y[src];
                out.mx[dst] = self.mx[src];
                out.my[dst] = self.my[src];
                out.jc[dst] = self.jc[src];
                out.js[dst] = self.js[src];
                out.air[dst] = self.air[src];
            }
        }
        out
    }

    pub fn row_is_air(&self, r: usize) -> bool {
        self.air[r * self.width..(r + 1) * self.width].iter().all(|&a| a)
    }

    /// Magnet part of the right-hand side: circulation of `M` around each control volume.
    pub fn magnet_rhs(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut rhs = vec![0.0; (h - 1) * w];
        for i in 1..h {
            for j in 0..w {
                let jl = (j + w - 1) % w;
                let (ne, nw, se, sw) = ((i - 1) * w + j, (i - 1) * w + jl, i * w + j, i * w + jl);
                rhs[(i - 1) * w + j] = 0.5 * self.hx * (self.mx[sw] + self.mx[se] - self.mx[ne] - self.mx[nw])
                    + 0.5 * self.hy * (self.my[se] + self.my[ne] - self.my[nw] - self.my[sw]);
            }
        }
        rhs
    }

    /// Current part of the right-hand side with copper weights `cos_w * jc + sin_w * js`.
    pub fn current_rhs(&self, j_amp: f64, cos_w: f64, sin_w: f64) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let quarter = 0.25 * self.hx * self.hy * j_amp;
        let cell: Vec<f64> = self.jc.iter().zip(&self.js).map(|(c, s)| quarter * (cos_w * c + sin_w * s)).collect();
        let mut rhs = vec![0.0; (h - 1) * w];
        for i in 1..h {
            for j in 0..w {
                let jl = (j + w - 1) % w;
                rhs[(i - 1) * w + j] = cell[(i - 1) * w + j] + cell[(i - 1) * w + jl] + cell[i * w + j] + cell[i * w + jl];
            }
        }
        rhs
    }
}

/// Assembled stiffness operator for one rotor position.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    w: usize,
    h: usize,
    hx: f64,
    hy: f64,
    /// Conductance of edge (i, j)-(i, j+1) for interior node rows, index `(i-1)*w + j`.
    kx: Vec<f64>,
    /// Conductance of edge (i, j)-(i+1, j), index `i*w + j`, `i` in `0..h`.
    ky: Vec<f64>,
    diag: Vec<f64>,
}

impl LinearSystem {
    pub fn assemble(grid: &PixelGrid, phys: &MaterialPhysics, rotor_shift_px: usize) -> Result<Self> {
        let med = Medium::from_grid(grid, phys)?;
        let gap = shift_gap_row(grid.height_px, grid.width_px, phys, rotor_shift_px)?;
        Ok(LinearSystem::from_medium(&med.shifted(gap, rotor_shift_px)))
    }

    pub fn from_medium(med: &Medium) -> Self {
        let (w, h) = (med.width, med.height);
        let (hx, hy) = (med.hx, med.hy);
        // Each dual face runs through two cells in parallel.
        let (nu_x, nu_y) = (&med.nu_x, &med.nu_y);
        let mut kx = vec![0.0; (h - 1) * w];
        for i in 1..h {
            for j in 0..w {
                kx[(i - 1) * w + j] = hy / hx * 0.5 * (nu_y[(i - 1) * w + j] + nu_y[i * w + j]);
            }
        }
        let mut ky = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let left = nu_x[i * w + (j + w - 1) % w];
                ky[i * w + j] = hx / hy * 0.5 * (left + nu_x[i * w + j]);
            }
        }
        let mut diag = vec![0.0; (h - 1) * w];
        for i in 1..h {
            for j in 0..w {
                diag[(i - 1) * w + j] = kx[(i - 1) * w + j]
                    + kx[(i - 1) * w + (j + w - 1) % w]
                    + ky[(i - 1) * w + j]
                    + ky[i * w + j];
            }
        }
        LinearSystem { w, h, hx, hy, kx, ky, diag }
    }

    pub fn n_unknowns(&self) -> usize {
        (self.h - 1) * self.w
    }

    /// Node spacing in metres.
    pub fn spacing_m(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (w, h) = (self.w, self.h);
        for i in 1..h {
            let row = (i - 1) * w;
            for j in 0..w {
                let u = row + j;
                let jr = if j + 1 == w { 0 } else { j + 1 };
                let jl = if j == 0 { w - 1 } else { j - 1 };
                let mut v = self.diag[u] * x[u] - self.kx[u] * x[row + jr] - self.kx[row + jl] * x[row + jl];
                if i > 1 {
                    v -= self.ky[(i - 1) * w + j] * x[u - w];
                }
                if i + 1 < h {
                    v -= self.ky[i * w + j] * x[u + w];
                }
                y[u] = v;
            }
        }
    }

    /// Entries `K[u][k]` with `k < u`.
    fn lower_entries(&self, u: usize) -> [(usize, f64); 3] {
        let w = self.w;
        let (row, j) = (u / w, u % w);
        let i = row + 1;
        let mut out = [(usize::MAX, 0.0); 3];
        if j > 0 {
            out[0] = (u - 1, -self.kx[u - 1]);
        }
        if j == w - 1 {
            out[1] = (row * w, -self.kx[u]);
        }
        if i > 1 {
            out[2] = (u - w, -self.ky[(i - 1) * w + j]);
        }
        out
    }

    /// Conjugate gradients from a zero initial guess.
    pub fn solve(&self, b: &[f64], opts: &SolverOptions) -> Result<FieldSolution> {
        self.solve_traced(b, opts, None)
    }

    pub fn solve_traced(&self, b: &[f64], opts: &SolverOptions, mut trace: Option<&mut CgTrace>) -> Result<FieldSolution> {
        let n = self.n_unknowns();
        assert_eq!(b.len(), n, "right-hand side length");
        let b_norm = norm(b);
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(self.expand(&x, 0.0, 0));
        }
        let inv_diag: Option<Vec<f64>> = match opts.preconditioner {
            Preconditioner::None => None,
            Preconditioner::Jacobi => Some(self.diag.iter().map(|d| 1.0 / d).collect()),
        };
        let precond = |r: &[f64], z: &mut [f64]| match &inv_diag {
            Some(d) => z.iter_mut().zip(r.iter().zip(d)).for_each(|(z, (r, d))| *z = r * d),
            None => z.copy_from_slice(r),
        };
        let mut r = b.to_vec();
        let mut z = vec![0.0; n];
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut kp = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut res = b_norm;
        if let Some(t) = trace.as_deref_mut() {
            t.residual_norms.push(res);
            t.energies.push(0.0);
        }
        for it in 1..=opts.max_iter {
            self.apply(&p, &mut kp);
            let alpha = rz / dot(&p, &kp);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * kp[k];
            }
            res = norm(&r);
            if let Some(t) = trace.as_deref_mut() {
                t.residual_norms.push(res);
                // x'Kx/2 - b'x = -(b'x + r'x)/2 since Kx = b - r
                t.energies.push(-0.5 * (dot(b, &x) + dot(&r, &x)));
            }
            if res <= opts.rel_tol * b_norm {
                return Ok(self.expand(&x, res / b_norm, it));
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: res / b_norm,
        })
    }

    /// Band Cholesky factor; the row-major node ordering gives bandwidth `w`.
    pub fn factor(&self) -> Result<BandCholesky> {
        BandCholesky::new(self)
    }

    fn expand(&self, x: &[f64], residual_norm: f64, iterations: usize) -> FieldSolution {
        let (w, h) = (self.w, self.h);
        let mut a = vec![0.0; (h + 1) * (w + 1)];
        for i in 1..h {
            for j in 0..w {
                a[i * (w + 1) + j] = x[(i - 1) * w + j];
            }
            a[i * (w + 1) + w] = x[(i - 1) * w];
        }
        FieldSolution {
            width_px: w,
            height_px: h,
            a,
            residual_norm,
            iterations,
        }
    }
}

/// Lower band factor `K = L L'` stored row-wise: entry `(i, k)` at `i*(bw+1) + k + bw - i`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
    system: LinearSystem,
}

impl BandCholesky {
    fn new(sys: &LinearSystem) -> Result<Self> {
        let n = sys.n_unknowns();
        let bw = sys.w.min(n.saturating_sub(1));
        let stride = bw + 1;
        let mut l = vec![0.0; n * stride];
        for u in 0..n {
            l[u * stride + bw] = sys.diag[u];
            for (k, v) in sys.lower_entries(u) {
                if k != usize::MAX {
                    l[u * stride + k + bw - u] += v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for k in lo..=i {
                let (ri, rk) = (i * stride + bw - i, k * stride + bw - k);
                let mut s = l[ri + k];
                let m_lo = lo.max(k.saturating_sub(bw));
                let a = &l[ri + m_lo..ri + k];
                let b = &l[rk + m_lo..rk + k];
                s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                if k == i {
                    if s <= 0.0 {
                        return Err(Error::Invalid("stiffness matrix is not positive definite".into()));
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + k] = s / l[rk + k];
                }
            }
        }
        Ok(BandCholesky {
            n,
            bw,
            l,
            system: sys.clone(),
        })
    }

    pub fn solve(&self, b: &[f64]) -> FieldSolution {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * stride + bw - i;
            let s: f64 = (lo..i).map(|k| self.l[ri + k] * y[k]).sum();
            y[i] = (y[i] - s) / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * stride + bw - i;
            y[i] /= self.l[ri + i];
            let lo = i.saturating_sub(bw);
            let yi = y[i];
            for k in lo..i {
                y[k] -= self.l[ri + k] * yi;
            }
        }
        let mut r = vec![0.0; n];
        self.system.apply(&y, &mut r);
        let b_norm = norm(b);
        let res = if b_norm > 0.0 {
            (r.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sqrt() / b_norm
        } else {
            0.0
        };
        self.system.expand(&y, res, 1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn shift_gap_row(height: usize, width: usize, phys: &MaterialPhysics, shift: usize) -> Result<usize> {
    if shift >= width {
        return Err(Error::Invalid(format!("rotor shift {shift} outside [0, {width})")));
    }
    match phys.gap_row {
        Some(r) if r < height => Ok(r),
        Some(r) => Err(Error::Invalid(format!("gap row {r} outside grid"))),
        None if shift == 0 => Ok(height),
        None => Err(Error::Invalid("rotor shift requires a gap row".into())),
    }
}

fn shifted_medium(grid: &PixelGrid, phys: &MaterialPhysics, shift: usize) -> Result<Medium> {
    let gap = shift_gap_row(grid.height_px, grid.width_px, phys, shift)?;
    Ok(Medium::from_grid(grid, phys)?.shifted(gap, shift))
}

pub fn magnet_rhs(grid: &PixelGrid, phys: &MaterialPhysics, rotor_shift_px: usize) -> Result<Vec<f64>> {
    Ok(shifted_medium(grid, phys, rotor_shift_px)?.magnet_rhs())
}

/// Copper cells carry `J_amp * cos(angle - phase_offset)`.
pub fn current_rhs(grid: &PixelGrid, phys: &MaterialPhysics, electrical_angle_rad: f64) -> Result<Vec<f64>> {
    let med = Medium::from_grid(grid, phys)?;
    Ok(med.current_rhs(phys.j_amp, electrical_angle_rad.cos(), electrical_angle_rad.sin()))
}

pub fn assemble_and_solve(grid: &PixelGrid, phys: &MaterialPhysics, exc: &Excitation) -> Result<FieldSolution> {
    assemble_and_solve_with(grid, phys, exc, &SolverOptions::default())
}

pub fn assemble_and_solve_with(
    grid: &PixelGrid,
    phys: &MaterialPhysics,
    exc: &Excitation,
    opts: &SolverOptions,
) -> Result<FieldSolution> {
    let med = shifted_medium(grid, phys, exc.rotor_shift_px)?;
    let sys = LinearSystem::from_medium(&med);
    let mut b = med.magnet_rhs();
    let (c, s) = (exc.electrical_angle_rad.cos(), exc.electrical_angle_rad.sin());
    // the stator band is not shifted, so current weights come from the unshifted cells
    for (bi, ci) in b.iter_mut().zip(med.current_rhs(phys.j_amp, c, s)) {
        *bi += ci;
    }
    sys.solve(&b, opts)
}

/// Cell-centred flux density `(Bx, By)` in tesla, row-major.
pub fn flux_density(sol: &FieldSolution, grid: &PixelGrid) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (sol.width_px, sol.height_px);
    let (hx, hy) = (grid.mm_per_px_x * 1e-3, grid.mm_per_px_y * 1e-3);
    let mut bx = vec![0.0; w * h];
    let mut by = vec![0.0; w * h];
    for r in 0..h {
        let (bxr, byr) = flux_row(sol, hx, hy, r);
        bx[r * w..(r + 1) * w].copy_from_slice(&bxr);
        by[r * w..(r + 1) * w].copy_from_slice(&byr);
    }
    (bx, by)
}

fn flux_row(sol: &FieldSolution, hx: f64, hy: f64, r: usize) -> (Vec<f64>, Vec<f64>) {
    let w = sol.width_px;
    let mut bx = vec![0.0; w];
    let mut by = vec![0.0; w];
    for c in 0..w {
        let (tl, tr) = (sol.at(r, c), sol.at(r, c + 1));
        let (bl, br) = (sol.at(r + 1, c), sol.at(r + 1, c + 1));
        bx[c] = ((tl + tr) - (bl + br)) / (2.0 * hy);
        by[c] = -((tr + br) - (tl + bl)) / (2.0 * hx);
    }
    (bx, by)
}

fn torque_scale(hx: f64, width_m: f64, phys: &MaterialPhysics) -> f64 {
    let p = phys.pole_pairs as f64;
    phys.nu_air * hx * phys.stack_length_m * (width_m * p / PI) * 2.0 * p
}

/// Maxwell-stress torque from the tangential stress along the gap row.
pub fn airgap_torque(sol: &FieldSolution, grid: &PixelGrid, phys: &MaterialPhysics) -> Result<f64> {
    let row = phys
        .gap_row
        .ok_or_else(|| Error::Invalid("airgap torque requires a gap row".into()))?;
    if row >= grid.height_px {
        return Err(Error::Invalid(format!("gap row {row} outside grid")));
    }
    let w = grid.width_px;
    if grid.materials[row * w..(row + 1) * w].iter().any(|&m| m != Material::Air.id()) {
        return Err(Error::GapRowNotAir { row });
    }
    let (hx, hy) = (grid.mm_per_px_x * 1e-3, grid.mm_per_px_y * 1e-3);
    let (bx, by) = flux_row(sol, hx, hy, row);
    let scale = torque_scale(hx, grid.domain_width_mm() * 1e-3, phys);
    Ok(scale * bx.iter().zip(&by).map(|(a, b)| a * b).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub units: Vec<String>,
}

impl KpiRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ConjugateGradient,
    #[default]
    BandCholesky,
}

/// Rotor-position and load-angle sweep used by the KPI post-processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n_shifts: usize,
    /// Current angles relative to the synchronous position, degrees.
    pub angles_deg: Vec<f64>,
    pub method: SolveMethod,
    pub solver: SolverOptions,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n_shifts: 8,
            angles_deg: vec![90.0, 112.5, 135.0, 157.5, 180.0],
            method: SolveMethod::BandCholesky,
            solver: SolverOptions::default(),
        }
    }
}

/// KPIs together with the torque table they were reduced from.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiDetail {
    pub record: KpiRecord,
    pub ripple_ratio: f64,
    pub gap_row: usize,
    pub shifts_px: Vec<usize>,
    /// `torque[angle][shift]`, N*m.
    pub torque: Vec<Vec<f64>>,
}

/// Row nearest the middle of the template's air band whose cells are all air.
pub fn derive_gap_row(template: &MachineTemplate, grid: &PixelGrid) -> Result<usize> {
    let w = grid.width_px;
    gap_row_where(template, grid.height_px, grid.mm_per_px_y, |r| {
        grid.materials[r * w..(r + 1) * w].iter().all(|&m| m == Material::Air.id())
    })
}

fn gap_row_where(template: &MachineTemplate, height: usize, cell_mm: f64, air: impl Fn(usize) -> bool) -> Result<usize> {
    let (lo, hi) = template
        .airgap_band_mm()
        .ok_or_else(|| Error::Invalid(format!("template `{}` has no airgap band", template.name())))?;
    let total = height as f64 * cell_mm;
    let center_y = |r: usize| total - (r as f64 + 0.5) * cell_mm;
    let mid = 0.5 * (lo + hi);
    (0..height)
        .filter(|&r| center_y(r) >= lo && center_y(r) <= hi && air(r))
        .min_by(|&a, &b| (center_y(a) - mid).abs().total_cmp(&(center_y(b) - mid).abs()))
        .ok_or_else(|| Error::Invalid("no all-air row inside the airgap band; raise the vertical resolution".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialMasses {
    pub iron: f64,
    pub copper: f64,
    pub magnet: f64,
}

/// Pixel count x pixel area x stack length x density, per material, kg.
pub fn material_masses(grid: &PixelGrid, phys: &MaterialPhysics) -> MaterialMasses {
    let volume_per_px = grid.pixel_area_mm2() * 1e-6 * phys.stack_length_m;
    let mass = |m: Material| grid.count(m) as f64 * volume_per_px * phys.densities_kg_per_m3.get(m);
    MaterialMasses {
        iron: mass(Material::Metal),
        copper: mass(Material::Copper),
        magnet: mass(Material::Magnet),
    }
}

pub fn compute_kpis(template: &MachineTemplate, p: &DesignVector, grid: &PixelGrid, phys: &MaterialPhysics) -> Result<KpiRecord> {
    Ok(compute_kpis_detailed(template, p, grid, 1, phys, &SweepSettings::default())?.record)
}

/// KPI evaluation: masses are counted on `grid`, fields are solved on
/// `grid` averaged over `field_factor` blocks.
pub fn compute_kpis_detailed(
    template: &MachineTemplate,
    p: &DesignVector,
    grid: &PixelGrid,
    field_factor: usize,
    phys: &MaterialPhysics,
    sweep: &SweepSettings,
) -> Result<KpiDetail> {
    phys.validate()?;
    if p.len() != template.n_params() {
        return Err(Error::DesignLength {
            template: template.name().to_string(),
            expected: template.n_params(),
            got: p.len(),
        });
    }
    let masses = material_masses(grid, phys);
    let prices = &phys.prices_eur_per_kg;
    let cost = masses.iron * prices.metal + masses.copper * prices.copper + masses.magnet * prices.magnet;

    let med = Medium::homogenized(grid, field_factor, phys)?;
    let gap_row = match phys.gap_row {
        Some(r) if r < med.height && med.row_is_air(r) => r,
        Some(r) => return Err(Error::GapRowNotAir { row: r }),
        None => gap_row_where(template, med.height, med.hy * 1e3, |r| med.row_is_air(r))?,
    };
    let (shifts_px, torque) = torque_table(&med, gap_row, phys, sweep)?;
    let (best_a, best) = torque
        .iter()
        .enumerate()
        .map(|(a, row)| (a, row.iter().sum::<f64>() / row.len() as f64))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let row = &torque[best_a];
    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let ripple = hi - lo;
    let ripple_ratio = if best != 0.0 { ripple / best.abs() } else { f64::INFINITY };

    let values = vec![cost, best, ripple, masses.iron, masses.copper, masses.magnet];
    let specs = template.kpis();
    Ok(KpiDetail {
        record: KpiRecord {
            values,
            names: specs.iter().map(|k| k.name.clone()).collect(),
            units: specs.iter().map(|k| k.unit.clone()).collect(),
        },
        ripple_ratio,
        gap_row,
        shifts_px,
        torque,
    })
}

/// Torque over the angle x shift sweep. Each rotor position needs three
/// solves (magnets, cosine and sine current patterns); current angles are
/// combined by superposition before the quadratic stress is formed.
pub fn torque_table(med: &Medium, gap_row: usize, phys: &MaterialPhysics, sweep: &SweepSettings) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if gap_row >= med.height || !med.row_is_air(gap_row) {
        return Err(Error::GapRowNotAir { row: gap_row });
    }
    let w = med.width;
    let n_slots = phys.slots_in_domain.max(1) as f64;
    let n_shifts = sweep.n_shifts.max(1);
    let shifts: Vec<usize> = (0..n_shifts)
        .map(|k| ((k as f64 * w as f64 / (n_slots * n_shifts as f64)).round() as usize) % w)
        .collect();
    let scale = torque_scale(med.hx, med.hx * w as f64, phys);
    let current = [med.current_rhs(phys.j_amp, 1.0, 0.0), med.current_rhs(phys.j_amp, 0.0, 1.0)];
    let mut table = vec![vec![0.0; shifts.len()]; sweep.angles_deg.len()];
    for (si, &s) in shifts.iter().enumerate() {
        let m = med.shifted(gap_row, s);
        let sys = LinearSystem::from_medium(&m);
        let rhs = [m.magnet_rhs(), current[0].clone(), current[1].clone()];
        let mut rows = Vec::with_capacity(3);
        match sweep.method {
            SolveMethod::BandCholesky => {
                let f = sys.factor()?;
                for b in &rhs {
                    rows.push(flux_row(&f.solve(b), med.hx, med.hy, gap_row));
                }
            }
            SolveMethod::ConjugateGradient => {
                for b in &rhs {
                    rows.push(flux_row(&sys.solve(b, &sweep.solver)?, med.hx, med.hy, gap_row));
                }
            }
        }
        let (bm, bc, bs) = (&rows[0], &rows[1], &rows[2]);
        let sync = 2.0 * PI * s as f64 / w as f64;
        for (ai, &deg) in sweep.angles_deg.iter().enumerate() {
            let theta = deg.to_radians() + sync;
            let (c, sn) = (theta.cos(), theta.sin());
            let mut f = 0.0;
            for x in 0..w {
                let bx = bm.0[x] + c * bc.0[x] + sn * bs.0[x];
                let by = bm.1[x] + c * bc.1[x] + sn * bs.1[x];
                f += bx * by;
            }
            table[ai][si] = scale * f;
        }
    }
    Ok((shifts, table))
}

/// Rasterize-and-solve pipeline producing ground-truth KPIs for a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub physics: MaterialPhysics,
    pub sweep: SweepSettings,
    /// Raster used for pixel-count masses, `(width, height)`.
    pub resolution: (usize, usize),
    /// Block size averaged into one field cell.
    pub field_factor: usize,
}

impl Oracle {
    pub fn for_template(template: &MachineTemplate) -> Self {
        let (resolution, field_factor) = match template.kind() {
            crate::geometry::TemplateKind::HalfPoleV => ((400, 632), 4),
            _ => ((1024, 1280), 16),
        };
        Oracle {
            physics: MaterialPhysics::for_template(template),
            sweep: SweepSettings::default(),
            resolution,
            field_factor,
        }
    }

    pub fn evaluate(&self, template: &MachineTemplate, p: &DesignVector) -> Result<KpiRecord> {
        Ok(self.evaluate_detailed(template, p)?.record)
    }

    pub fn evaluate_detailed(&self, template: &MachineTemplate, p: &DesignVector) -> Result<KpiDetail> {
        let cs = template.build_cross_section(p)?;
        let grid = rasterize(&cs, self.resolution.0, self.resolution.1)?;
        compute_kpis_detailed(template, p, &grid, self.field_factor, &self.physics, &self.sweep)
    }
}

/// Appends KPI rows (design id, then one column per KPI) to a CSV file,
/// writing the header when the file is new.
pub fn append_kpi_csv(path: &Path, rows: &[(usize, KpiRecord)]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if let Some((_, first)) = rows.first() {
        if !exists {
            let mut header = vec!["id".to_string()];
            header.extend(first.names.iter().cloned());
            w.write_record(&header)?;
        }
    }
    for (id, rec) in rows {
        let mut fields = vec![id.to_string()];
        fields.extend(rec.values.iter().map(|v| format!("{v:e}")));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
