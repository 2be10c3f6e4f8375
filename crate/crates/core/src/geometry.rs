//! Parametric machine templates and their polygonal cross-sections.
//!
//! Cross-sections are built directly in the rectangular image frame: `x` runs
//! tangentially (left to right, periodic in the field solver) and `y` runs
//! radially upward from the bottom of the domain (rotor/shaft side) to the top
//! (stator yoke side). All lengths are millimetres.
//!
//! Regions are painted in order, later regions overwrite earlier ones:
//! metal bodies, then air pockets and slot openings, then magnets, then copper.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Mm,
    Degree,
    Dimensionless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub unit: Unit,
}

impl ParamSpec {
    pub fn new(name: &str, min: f64, max: f64, unit: Unit) -> Result<Self> {
        let spec = ParamSpec {
            name: name.to_string(),
            min,
            max,
            unit,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidParamSpec {
                name: self.name.clone(),
                reason: format!("requires min < max, got [{}, {}]", self.min, self.max),
            });
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// Half-pole rotor with a single V-magnet leg and a six-slot stator band.
    HalfPoleV,
    /// Full pole with outer and inner V-magnet layers and a six-slot stator.
    FullPoleVc,
    /// Plate inside a box, parameterized by side margin `a` and top margin `b`.
    PlateMargin,
    /// The same plate parameterized by its height `d` and width `e`.
    PlateExtent,
}

impl TemplateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::HalfPoleV => "half_pole_v",
            TemplateKind::FullPoleVc => "full_pole_vc",
            TemplateKind::PlateMargin => "plate_margin",
            TemplateKind::PlateExtent => "plate_extent",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half_pole_v" => Ok(TemplateKind::HalfPoleV),
            "full_pole_vc" => Ok(TemplateKind::FullPoleVc),
            "plate_margin" => Ok(TemplateKind::PlateMargin),
            "plate_extent" => Ok(TemplateKind::PlateExtent),
            other => Err(Error::UnknownTemplate(other.to_string())),
        }
    }
}

/// Constant machine attributes shared by every design of a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAttributes {
    pub pole_pairs: u32,
    pub slots: u32,
    pub slots_per_pole_per_phase: u32,
    /// Slots contained in the rectangular domain.
    pub slots_in_domain: u32,
    pub stack_length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSpec {
    pub name: String,
    pub unit: String,
}

/// Default KPI roster produced by the field oracle.
pub fn default_kpis() -> Vec<KpiSpec> {
    [
        ("cost", "EUR"),
        ("max_torque", "N*m"),
        ("torque_ripple", "N*m"),
        ("mass_iron", "kg"),
        ("mass_copper", "kg"),
        ("mass_magnet", "kg"),
    ]
    .iter()
    .map(|(n, u)| KpiSpec {
        name: n.to_string(),
        unit: u.to_string(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineTemplate {
    kind: TemplateKind,
    name: String,
    domain_width_mm: f64,
    domain_height_mm: f64,
    params: Vec<ParamSpec>,
    fixed: FixedAttributes,
    constraints: Vec<String>,
    kpis: Vec<KpiSpec>,
}

// Layout constants of the half-pole template.
mod half {
    pub const WIDTH: f64 = 50.0;
    pub const HEIGHT: f64 = 79.0;
    pub const ROTOR_BASE_RADIUS: f64 = 40.0;
    pub const STATOR_TIP_Y: f64 = 38.5;
    pub const LEG_ANCHOR_X: f64 = 42.0;
    pub const SLOT_OPENING: f64 = 2.0;
    pub const SHAFT_CLEARANCE_Y: f64 = 20.0;
    pub const MIN_AIRGAP: f64 = 0.5;
    pub const MIN_YOKE: f64 = 8.0;
}

// Layout constants of the full-pole template.
mod vc {
    pub const WIDTH: f64 = 73.5;
    pub const HEIGHT: f64 = 96.3;
    pub const ROTOR_BASE_RADIUS: f64 = 40.0;
    pub const STATOR_TIP_Y: f64 = 47.0;
    pub const SLOT_OPENING: f64 = 2.5;
    pub const OUTER_BRIDGE: f64 = 1.5;
    pub const LAYER_RIB: f64 = 2.0;
    pub const SHAFT_CLEARANCE_Y: f64 = 19.0;
    pub const MIN_AIRGAP: f64 = 1.5;
    pub const MIN_YOKE: f64 = 10.0;
}

mod plate {
    pub const WIDTH: f64 = 60.0;
    pub const HEIGHT: f64 = 60.0;
}

const POCKET_EXTENSION: f64 = 1.0;
const CENTER_RIB_HALF: f64 = 1.0;
const EDGE_MARGIN: f64 = 1.0;
const BARRIER_MIN_WIDTH: f64 = 1.0;

/// Builds one of the built-in templates.
pub fn build_template(kind: TemplateKind) -> MachineTemplate {
    use Unit::*;
    let p = |n: &str, lo: f64, hi: f64, u: Unit| ParamSpec::new(n, lo, hi, u).expect("static spec");
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let machine = FixedAttributes {
        pole_pairs: 4,
        slots: 48,
        slots_per_pole_per_phase: 2,
        slots_in_domain: 6,
        stack_length_m: 0.1,
    };
    match kind {
        TemplateKind::HalfPoleV => MachineTemplate {
            kind,
            name: kind.as_str().into(),
            domain_width_mm: half::WIDTH,
            domain_height_mm: half::HEIGHT,
            params: vec![
                p("magnet_width", 10.0, 18.0, Mm),
                p("magnet_height", 3.0, 6.0, Mm),
                p("magnet_angle", 0.0, 30.0, Degree),
                p("rotor_diameter", 141.699, 155.3637, Mm),
                p("magnet_depth", 1.5, 5.0, Mm),
                p("tooth_width", 3.0, 5.0, Mm),
                p("tooth_height", 10.0, 16.0, Mm),
                p("tooth_head_height", 1.5, 3.0, Mm),
            ],
            fixed: machine,
            constraints: names(&[
                "magnet_rotor_clearance",
                "magnet_bridge",
                "magnet_separation",
                "magnet_pole_edge",
                "airgap_min",
                "slot_in_stator",
            ]),
            kpis: default_kpis(),
        },
        TemplateKind::FullPoleVc => MachineTemplate {
            kind,
            name: kind.as_str().into(),
            domain_width_mm: vc::WIDTH,
            domain_height_mm: vc::HEIGHT,
            params: vec![
                p("inner_magnet_angle", 15.0, 40.0, Degree),
                p("outer_magnet_height", 3.0, 7.0, Mm),
                p("outer_pole_angle", 45.0, 80.0, Degree),
                p("tooth_head_height", 4.0, 7.0, Mm),
                p("rotor_outer_diameter", 160.0, 170.0, Mm),
                p("inner_magnet_height", 4.0, 7.0, Mm),
                p("inner_magnet_width", 7.0, 11.5, Mm),
                p("inner_pole_angle", 28.0, 58.0, Degree),
                p("outer_magnet_width", 7.0, 12.0, Mm),
                p("outer_magnet_angle", 15.0, 38.0, Degree),
                p("tooth_height", 12.0, 17.0, Mm),
                p("tooth_width", 5.0, 9.0, Mm),
            ],
            fixed: machine,
            constraints: names(&[
                "outer_pole_edge",
                "outer_separation",
                "inner_pole_edge",
                "inner_separation",
                "magnet_rotor_clearance",
                "airgap_min",
                "slot_in_stator",
            ]),
            kpis: default_kpis(),
        },
        TemplateKind::PlateMargin | TemplateKind::PlateExtent => {
            let params = if kind == TemplateKind::PlateMargin {
                vec![p("a", 5.0, 20.0, Mm), p("b", 5.0, 30.0, Mm)]
            } else {
                vec![p("d", 30.0, 55.0, Mm), p("e", 20.0, 50.0, Mm)]
            };
            MachineTemplate {
                kind,
                name: kind.as_str().into(),
                domain_width_mm: plate::WIDTH,
                domain_height_mm: plate::HEIGHT,
                params,
                fixed: FixedAttributes {
                    pole_pairs: 1,
                    slots: 0,
                    slots_per_pole_per_phase: 0,
                    slots_in_domain: 0,
                    stack_length_m: 0.1,
                },
                constraints: Vec::new(),
                kpis: default_kpis(),
            }
        }
    }
}

/// Parses a kind name and builds the template.
pub fn build_template_named(kind: &str) -> Result<MachineTemplate> {
    Ok(build_template(kind.parse()?))
}

impl MachineTemplate {
    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_width_mm(&self) -> f64 {
        self.domain_width_mm
    }

    pub fn domain_height_mm(&self) -> f64 {
        self.domain_height_mm
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn fixed(&self) -> &FixedAttributes {
        &self.fixed
    }

    pub fn constraint_names(&self) -> &[String] {
        &self.constraints
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn kpis(&self) -> &[KpiSpec] {
        &self.kpis
    }

    pub fn kpi_names(&self) -> Vec<String> {
        self.kpis.iter().map(|k| k.name.clone()).collect()
    }

    pub fn midpoint(&self) -> DesignVector {
        DesignVector {
            values: self.params.iter().map(ParamSpec::midpoint).collect(),
            template_id: self.name.clone(),
        }
    }

    /// Vertical extent `(y_lo, y_hi)` that is air for every design in the box.
    pub fn airgap_band_mm(&self) -> Option<(f64, f64)> {
        match self.kind {
            TemplateKind::HalfPoleV => {
                let d_max = self.params[3].max;
                Some((d_max / 2.0 - half::ROTOR_BASE_RADIUS, half::STATOR_TIP_Y))
            }
            TemplateKind::FullPoleVc => {
                let d_max = self.params[4].max;
                Some((d_max / 2.0 - vc::ROTOR_BASE_RADIUS, vc::STATOR_TIP_Y))
            }
            _ => None,
        }
    }

    /// Slot centres along `x` with their phase index (0, 1, 2).
    pub fn slots(&self) -> Vec<(f64, usize)> {
        let n = self.fixed.slots_in_domain as usize;
        if n == 0 {
            return Vec::new();
        }
        let pitch = self.domain_width_mm / n as f64;
        let spp = self.fixed.slots_per_pole_per_phase.max(1) as usize;
        (0..n)
            .map(|s| ((s as f64 + 0.5) * pitch, (s / spp) % 3))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a template document; it must agree with the built-in template
    /// of the same kind, since geometry generation is defined in code.
    pub fn from_json(s: &str) -> Result<Self> {
        let t: MachineTemplate = serde_json::from_str(s)?;
        for spec in &t.params {
            spec.validate()?;
        }
        let reference = build_template(t.kind);
        if t.params.len() != reference.params.len() {
            return Err(Error::Invalid(format!(
                "template `{}` declares {} parameters, kind `{}` has {}",
                t.name,
                t.params.len(),
                t.kind,
                reference.params.len()
            )));
        }
        if !(t.domain_width_mm > 0.0 && t.domain_height_mm > 0.0) {
            return Err(Error::Invalid("domain dimensions must be positive".into()));
        }
        Ok(t)
    }

    pub fn design(&self, values: Vec<f64>) -> Result<DesignVector> {
        DesignVector::new(self, values)
    }

    /// Maps unit-cube coordinates onto the parameter box.
    pub fn design_from_unit(&self, u: &[f64]) -> Result<DesignVector> {
        if u.len() != self.params.len() {
            return Err(Error::DesignLength {
                template: self.name.clone(),
                expected: self.params.len(),
                got: u.len(),
            });
        }
        let values = self
            .params
            .iter()
            .zip(u)
            .map(|(s, &t)| (s.min + t.clamp(0.0, 1.0) * s.range()).clamp(s.min, s.max))
            .collect();
        self.design(values)
    }

    /// Constraint values `c_k(p)`; the design is feasible iff all are `<= 0`.
    pub fn check_constraints(&self, p: &DesignVector) -> Result<Vec<f64>> {
        self.check_len(p)?;
        let v = &p.values;
        Ok(match self.kind {
            TemplateKind::HalfPoleV => {
                let l = HalfLayout::new(v);
                let (xmin, xmax, ymin, ymax) = bbox(&l.leg.pocket);
                vec![
                    half::SHAFT_CLEARANCE_Y - ymin,
                    ymax - (l.rotor_top - 1.0),
                    CENTER_RIB_HALF - xmin,
                    xmax + EDGE_MARGIN - half::WIDTH,
                    half::MIN_AIRGAP - (half::STATOR_TIP_Y - l.rotor_top),
                    half::STATOR_TIP_Y + l.head_h + l.tooth_h + half::MIN_YOKE - half::HEIGHT,
                ]
            }
            TemplateKind::FullPoleVc => {
                let l = VcLayout::new(v);
                let cx = vc::WIDTH / 2.0;
                let (oxmin, oxmax, _, _) = bbox(&l.outer[1].pocket);
                let (ixmin, ixmax, iymin, _) = bbox(&l.inner[1].pocket);
                vec![
                    oxmax + EDGE_MARGIN - vc::WIDTH,
                    CENTER_RIB_HALF - (oxmin - cx),
                    ixmax + EDGE_MARGIN - vc::WIDTH,
                    CENTER_RIB_HALF - (ixmin - cx),
                    vc::SHAFT_CLEARANCE_Y - iymin,
                    vc::MIN_AIRGAP - (vc::STATOR_TIP_Y - l.rotor_top),
                    vc::STATOR_TIP_Y + l.head_h + l.tooth_h + vc::MIN_YOKE - vc::HEIGHT,
                ]
            }
            TemplateKind::PlateMargin | TemplateKind::PlateExtent => Vec::new(),
        })
    }

    pub fn is_feasible(&self, p: &DesignVector) -> Result<bool> {
        Ok(self.check_constraints(p)?.iter().all(|&c| c <= 0.0))
    }

    /// Sum of positive constraint values.
    pub fn violation(&self, p: &DesignVector) -> Result<f64> {
        Ok(self
            .check_constraints(p)?
            .iter()
            .map(|&c| c.max(0.0))
            .sum())
    }

    pub fn build_cross_section(&self, p: &DesignVector) -> Result<CrossSection> {
        let c = self.check_constraints(p)?;
        if let Some((k, &value)) = c.iter().enumerate().find(|(_, &v)| v > 0.0) {
            return Err(Error::ConstraintViolated {
                name: self.constraints[k].clone(),
                value,
            });
        }
        let v = &p.values;
        let (w, h) = (self.domain_width_mm, self.domain_height_mm);
        let mut regions = Vec::new();
        match self.kind {
            TemplateKind::HalfPoleV => {
                let l = HalfLayout::new(v);
                regions.push(Region::rect(0.0, 0.0, w, l.rotor_top, Material::Metal));
                regions.push(Region::rect(0.0, half::STATOR_TIP_Y, w, h, Material::Metal));
                regions.push(Region::polygon(l.leg.pocket.to_vec(), Material::Air));
                regions.push(l.leg.end_barrier(l.rotor_top));
                let [_, q1, q2, _] = l.leg.pocket;
                regions.push(Region::rect(0.0, q1[1].min(q2[1]), q1[0].max(q2[0]), q1[1].max(q2[1]), Material::Air));
                self.push_stator(&mut regions, half::STATOR_TIP_Y, l.head_h, l.tooth_h, l.tooth_w, half::SLOT_OPENING);
                regions.push(Region::magnet(l.leg.magnet.to_vec(), l.leg.direction));
                self.push_copper(&mut regions, half::STATOR_TIP_Y, l.head_h, l.tooth_h, l.tooth_w);
            }
            TemplateKind::FullPoleVc => {
                let l = VcLayout::new(v);
                regions.push(Region::rect(0.0, 0.0, w, l.rotor_top, Material::Metal));
                regions.push(Region::rect(0.0, vc::STATOR_TIP_Y, w, h, Material::Metal));
                for leg in l.outer.iter().chain(l.inner.iter()) {
                    regions.push(Region::polygon(leg.pocket.to_vec(), Material::Air));
                }
                regions.push(center_connector(&l.outer[0], &l.outer[1]));
                regions.push(center_connector(&l.inner[0], &l.inner[1]));
                for leg in l.outer.iter().chain(l.inner.iter()) {
                    regions.push(leg.end_barrier(l.rotor_top));
                }
                self.push_stator(&mut regions, vc::STATOR_TIP_Y, l.head_h, l.tooth_h, l.tooth_w, vc::SLOT_OPENING);
                for leg in l.outer.iter().chain(l.inner.iter()) {
                    regions.push(Region::magnet(leg.magnet.to_vec(), leg.direction));
                }
                self.push_copper(&mut regions, vc::STATOR_TIP_Y, l.head_h, l.tooth_h, l.tooth_w);
            }
            TemplateKind::PlateMargin => {
                let (a, b) = (v[0], v[1]);
                regions.push(Region::rect(a, 0.0, w - a, h - b, Material::Metal));
            }
            TemplateKind::PlateExtent => {
                let (d, e) = (v[0], v[1]);
                let a = (w - e) / 2.0;
                regions.push(Region::rect(a, 0.0, a + e, d, Material::Metal));
            }
        }
        Ok(CrossSection {
            width_mm: w,
            height_mm: h,
            regions,
        })
    }

    // Slot openings through the tooth heads and the slot bodies are cut as air.
    fn push_stator(&self, regions: &mut Vec<Region>, tip: f64, head_h: f64, tooth_h: f64, tooth_w: f64, opening: f64) {
        let pitch = self.domain_width_mm / self.fixed.slots_in_domain as f64;
        for (xc, _) in self.slots() {
            regions.push(Region::rect(xc - opening / 2.0, tip, xc + opening / 2.0, tip + head_h, Material::Air));
            let sw = pitch - tooth_w;
            regions.push(Region::rect(xc - sw / 2.0, tip + head_h, xc + sw / 2.0, tip + head_h + tooth_h, Material::Air));
        }
    }

    fn push_copper(&self, regions: &mut Vec<Region>, tip: f64, head_h: f64, tooth_h: f64, tooth_w: f64) {
        let pitch = self.domain_width_mm / self.fixed.slots_in_domain as f64;
        let sw = pitch - tooth_w;
        for (xc, _) in self.slots() {
            regions.push(Region::rect(xc - sw / 2.0, tip + head_h, xc + sw / 2.0, tip + head_h + tooth_h, Material::Copper));
        }
    }

    fn check_len(&self, p: &DesignVector) -> Result<()> {
        if p.values.len() != self.params.len() {
            return Err(Error::DesignLength {
                template: self.name.clone(),
                expected: self.params.len(),
                got: p.values.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub values: Vec<f64>,
    pub template_id: String,
}

impl DesignVector {
    /// Validates length and bounds; out-of-range values are errors, not clamped.
    pub fn new(template: &MachineTemplate, values: Vec<f64>) -> Result<Self> {
        if values.len() != template.params.len() {
            return Err(Error::DesignLength {
                template: template.name.clone(),
                expected: template.params.len(),
                got: values.len(),
            });
        }
        for (spec, &v) in template.params.iter().zip(&values) {
            if !spec.contains(v) {
                return Err(Error::OutOfBounds {
                    name: spec.name.clone(),
                    value: v,
                    min: spec.min,
                    max: spec.max,
                });
            }
        }
        Ok(DesignVector {
            values,
            template_id: template.name.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Min-max coordinates in the template's parameter box.
    pub fn to_unit(&self, template: &MachineTemplate) -> Vec<f64> {
        template
            .params
            .iter()
            .zip(&self.values)
            .map(|(s, &v)| (v - s.min) / s.range())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Material {
    Air = 0,
    Metal = 1,
    Magnet = 2,
    Copper = 3,
}

impl Material {
    pub const ALL: [Material; 4] = [Material::Air, Material::Metal, Material::Magnet, Material::Copper];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Material> {
        Material::ALL.get(id as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub polygon: Vec<[f64; 2]>,
    pub material: Material,
    pub magnet_direction: Option<[f64; 2]>,
}

impl Region {
    pub fn polygon(polygon: Vec<[f64; 2]>, material: Material) -> Self {
        Region {
            polygon,
            material,
            magnet_direction: None,
        }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, material: Material) -> Self {
        Region::polygon(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], material)
    }

    pub fn magnet(polygon: Vec<[f64; 2]>, direction: [f64; 2]) -> Self {
        Region {
            polygon,
            material: Material::Magnet,
            magnet_direction: Some(direction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub width_mm: f64,
    pub height_mm: f64,
    pub regions: Vec<Region>,
}

impl CrossSection {
    pub fn empty(width_mm: f64, height_mm: f64) -> Self {
        CrossSection {
            width_mm,
            height_mm,
            regions: Vec::new(),
        }
    }

    /// Checks the structural invariants: vertices inside the domain, magnet
    /// directions present exactly on magnets with unit norm, simple polygons.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        for (i, r) in self.regions.iter().enumerate() {
            if r.polygon.len() < 3 {
                return Err(Error::Invalid(format!("region {i} has fewer than 3 vertices")));
            }
            for &[x, y] in &r.polygon {
                if x < -tol || x > self.width_mm + tol || y < -tol || y > self.height_mm + tol {
                    return Err(Error::Invalid(format!("region {i} vertex ({x}, {y}) outside domain")));
                }
            }
            match (r.material, r.magnet_direction) {
                (Material::Magnet, Some([dx, dy])) => {
                    if ((dx * dx + dy * dy).sqrt() - 1.0).abs() > 1e-9 {
                        return Err(Error::Invalid(format!("region {i} magnet direction not unit")));
                    }
                }
                (Material::Magnet, None) => {
                    return Err(Error::Invalid(format!("magnet region {i} lacks a direction")));
                }
                (_, Some(_)) => {
                    return Err(Error::Invalid(format!("non-magnet region {i} carries a direction")));
                }
                _ => {}
            }
            if !is_simple(&r.polygon) {
                return Err(Error::Invalid(format!("region {i} polygon self-intersects")));
            }
        }
        Ok(())
    }
}

/// Exact area of a simple polygon (shoelace).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s.abs()
}

fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let seg = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        for j in (i + 1)..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn bbox(poly: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), &[x, y]| (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
    )
}

#[derive(Debug, Clone)]
struct VLeg {
    pocket: [[f64; 2]; 4],
    magnet: [[f64; 2]; 4],
    direction: [f64; 2],
}

/// One tilted magnet leg. `anchor` is the upper outer corner of the magnet;
/// the leg runs down toward the pole centre. `side` is +1 for a leg right of
/// the pole centre and -1 for its mirror image.
fn v_leg(anchor: [f64; 2], side: f64, length: f64, thickness: f64, tilt_deg: f64) -> VLeg {
    let (s, c) = tilt_deg.to_radians().sin_cos();
    let u = [-side * c, -s];
    let v = [side * s, -c];
    let at = |p: [f64; 2], a: f64, b: f64| [p[0] + a * u[0] + b * v[0], p[1] + a * u[1] + b * v[1]];
    let e = POCKET_EXTENSION;
    VLeg {
        magnet: [anchor, at(anchor, length, 0.0), at(anchor, length, thickness), at(anchor, 0.0, thickness)],
        pocket: [
            at(anchor, -e, 0.0),
            at(anchor, length + e, 0.0),
            at(anchor, length + e, thickness),
            at(anchor, -e, thickness),
        ],
        direction: [-side * s, c],
    }
}

impl VLeg {
    /// Air strip from the outer pocket end up to height `top`.
    fn end_barrier(&self, top: f64) -> Region {
        let [q0, _, _, q3] = self.pocket;
        let xa = q0[0].min(q3[0]);
        let xb = q0[0].max(q3[0]).max(xa + BARRIER_MIN_WIDTH);
        Region::rect(xa, q0[1].min(q3[1]), xb, top, Material::Air)
    }
}

/// Air bridge joining the inner pocket ends of a V at the pole centre.
fn center_connector(left: &VLeg, right: &VLeg) -> Region {
    let [_, l1, l2, _] = left.pocket;
    let [_, r1, r2, _] = right.pocket;
    Region::polygon(vec![l1, r1, r2, l2], Material::Air)
}

struct HalfLayout {
    rotor_top: f64,
    leg: VLeg,
    tooth_w: f64,
    tooth_h: f64,
    head_h: f64,
}

impl HalfLayout {
    fn new(v: &[f64]) -> Self {
        let rotor_top = v[3] / 2.0 - half::ROTOR_BASE_RADIUS;
        let leg = v_leg([half::LEG_ANCHOR_X, rotor_top - v[4]], 1.0, v[0], v[1], v[2]);
        HalfLayout {
            rotor_top,
            leg,
            tooth_w: v[5],
            tooth_h: v[6],
            head_h: v[7],
        }
    }
}

struct VcLayout {
    rotor_top: f64,
    /// [left, right]
    outer: [VLeg; 2],
    inner: [VLeg; 2],
    tooth_w: f64,
    tooth_h: f64,
    head_h: f64,
}

impl VcLayout {
    fn new(v: &[f64]) -> Self {
        let cx = vc::WIDTH / 2.0;
        let rotor_top = v[4] / 2.0 - vc::ROTOR_BASE_RADIUS;
        // pole angles map linearly onto the half-pole width
        let outer_span = cx * v[2] / 90.0;
        let inner_span = cx * v[7] / 90.0;
        let oy = rotor_top - vc::OUTER_BRIDGE;
        let outer = [-1.0, 1.0].map(|side| v_leg([cx + side * outer_span, oy], side, v[8], v[1], v[9]));
        let (_, _, outer_bottom, _) = bbox(&outer[1].pocket);
        let iy = outer_bottom - vc::LAYER_RIB;
        let inner = [-1.0, 1.0].map(|side| v_leg([cx + side * inner_span, iy], side, v[6], v[5], v[0]));
        VcLayout {
            rotor_top,
            outer,
            inner,
            tooth_w: v[11],
            tooth_h: v[10],
            head_h: v[3],
        }
    }
}
