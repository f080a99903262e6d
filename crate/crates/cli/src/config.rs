//! TOML verification configs.
//!
//! ```toml
//! seed = 7
//! order = 2
//! suites = ["ccr", "green"]
//!
//! [lattice]
//! n_t = 16
//! n_x = 8
//! dt = 0.5
//! dx = 1.0
//! topology = "periodic"      # or "reflecting"
//!
//! [field]
//! mass_sq = 0.5
//! potential = 0.0            # or one value per spatial site
//!
//! [slabs.N]
//! t_lo = 10
//! t_hi = 14
//!
//! [vertex]
//! monomials = [{ power = 1, label = "phi" }, { power = 3, label = "phi3" }]
//!
//! [couplings.f]
//! terms = [{ monomial = "phi3", points = [[12, 3, 0.2, 0.0]] }]   # [t, x, re, im]
//!
//! [tolerances]
//! "ccr.commutator" = 1e-10   # override by check-id prefix
//!
//! [params.ccr]
//! samples = 20
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use timeslice_core::perturbation::{CouplingFunction, Monomial, VertexSpec};
use timeslice_core::{KleinGordonOperator, LatticeSpacetime, Point, Region, Slab, Topology, C64};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n_t: usize,
    pub n_x: usize,
    pub dt: f64,
    pub dx: f64,
    #[serde(default = "default_topology")]
    pub topology: String,
}

fn default_topology() -> String {
    "periodic".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PotentialConfig {
    Constant(f64),
    PerSite(Vec<f64>),
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig::Constant(0.0)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub mass_sq: f64,
    #[serde(default)]
    pub potential: PotentialConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabConfig {
    pub t_lo: usize,
    pub t_hi: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    pub power: usize,
    pub label: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexConfig {
    pub monomials: Vec<MonomialConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub monomial: String,
    /// `[t, x, re, im]` per point.
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcrParams {
    pub samples: usize,
    pub support_points: usize,
}

impl Default for CcrParams {
    fn default() -> Self {
        Self { samples: 20, support_points: 6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WickParams {
    pub associativity_samples: usize,
    pub oracle_samples: usize,
    pub ideal_samples: usize,
    pub support_points: usize,
    pub max_grade: usize,
}

impl Default for WickParams {
    fn default() -> Self {
        Self { associativity_samples: 10, oracle_samples: 5, ideal_samples: 20, support_points: 4, max_grade: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeTimesliceParams {
    pub slab: String,
    pub samples: usize,
    pub probes: usize,
    pub max_grade: usize,
    pub support_points: usize,
    /// Rows `[lo, hi]` the random elements are drawn from.
    pub support_rows: [usize; 2],
}

impl Default for FreeTimesliceParams {
    fn default() -> Self {
        Self { slab: "N".into(), samples: 10, probes: 10, max_grade: 3, support_points: 3, support_rows: [20, 28] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop2Params {
    pub random_samples: usize,
}

impl Default for Prop2Params {
    fn default() -> Self {
        Self { random_samples: 20 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorizationParams {
    pub f: String,
    pub g: String,
    pub h: String,
}

impl Default for FactorizationParams {
    fn default() -> Self {
        Self { f: "f".into(), g: "g".into(), h: "h".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BIndependenceParams {
    pub g: String,
    pub f: String,
    /// `[t_lo, t_hi, x_lo, x_hi]`.
    pub k: [usize; 4],
    /// How many dilation steps of `K` define the second restriction.
    pub enlargement: usize,
}

impl Default for BIndependenceParams {
    fn default() -> Self {
        Self { g: "g".into(), f: "f".into(), k: [10, 11, 3, 4], enlargement: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractingParams {
    pub g: String,
    pub n: String,
    pub n_inner: String,
    pub sigma1_t: usize,
    pub sigma2_t: usize,
    /// `[t_lo, t_hi, x_lo, x_hi]`.
    pub k: [usize; 4],
    pub generators: usize,
    /// Couplings `h` for the inverse-map check.
    pub inverse_samples: usize,
}

impl Default for InteractingParams {
    fn default() -> Self {
        Self {
            g: "g".into(),
            n: "N".into(),
            n_inner: "N_inner".into(),
            sigma1_t: 8,
            sigma2_t: 4,
            k: [22, 24, 5, 6],
            generators: 5,
            inverse_samples: 3,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteParams {
    pub ccr: CcrParams,
    pub green: CcrParams,
    #[serde(rename = "wick-algebra")]
    pub wick: WickParams,
    #[serde(rename = "free-timeslice")]
    pub free_timeslice: FreeTimesliceParams,
    pub prop2: Prop2Params,
    pub factorization: FactorizationParams,
    #[serde(rename = "b-independence")]
    pub b_independence: BIndependenceParams,
    #[serde(rename = "interacting-timeslice")]
    pub interacting: InteractingParams,
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    pub lattice: LatticeConfig,
    pub field: FieldConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub suites: Vec<String>,
    #[serde(default)]
    pub slabs: BTreeMap<String, SlabConfig>,
    #[serde(default)]
    pub vertex: Option<VertexConfig>,
    #[serde(default)]
    pub couplings: BTreeMap<String, CouplingConfig>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub params: SuiteParams,
}

/// A parsed config together with the digest of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: VerificationConfig,
    pub digest: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

impl LoadedConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let config: VerificationConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))?;
        config.validate()?;
        Ok(Self { config, digest: digest(text) })
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl VerificationConfig {
    /// Structural checks that do not need any kernels.
    pub fn validate(&self) -> Result<(), CliError> {
        self.operator()?;
        for name in self.slabs.keys() {
            self.slab(name)?;
        }
        if !self.couplings.is_empty() {
            let vertex = self.vertex_spec()?;
            for name in self.couplings.keys() {
                self.coupling(name, &vertex)?;
            }
        }
        if let Some((name, _)) = self.tolerances.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::Config(format!("tolerance '{name}' must be a non-negative number")));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        match self.lattice.topology.as_str() {
            "periodic" => Ok(Topology::Periodic),
            "reflecting" => Ok(Topology::Reflecting),
            other => Err(CliError::Config(format!("unknown topology '{other}' (periodic | reflecting)"))),
        }
    }

    pub fn spacetime(&self) -> Result<LatticeSpacetime, CliError> {
        let l = &self.lattice;
        LatticeSpacetime::new(l.n_t, l.n_x, l.dt, l.dx, self.topology()?).map_err(config_err)
    }

    pub fn operator(&self) -> Result<KleinGordonOperator, CliError> {
        let st = self.spacetime()?;
        let potential = match &self.field.potential {
            PotentialConfig::Constant(v) => vec![*v; st.n_x()],
            PotentialConfig::PerSite(v) => v.clone(),
        };
        KleinGordonOperator::new(st, self.field.mass_sq, potential).map_err(config_err)
    }

    pub fn slab(&self, name: &str) -> Result<Slab, CliError> {
        let s = self.slabs.get(name).ok_or_else(|| CliError::Config(format!("no slab named '{name}'")))?;
        let slab = Slab::new(s.t_lo, s.t_hi).map_err(|e| CliError::Config(format!("slab '{name}': {e}")))?;
        slab.check_interior(&self.spacetime()?).map_err(|e| CliError::Config(format!("slab '{name}': {e}")))?;
        Ok(slab)
    }

    pub fn vertex_spec(&self) -> Result<VertexSpec, CliError> {
        let v = self.vertex.as_ref().ok_or_else(|| CliError::Config("missing [vertex] section".into()))?;
        VertexSpec::new(v.monomials.iter().map(|m| Monomial { power: m.power, label: m.label.clone() }).collect())
            .map_err(config_err)
    }

    pub fn coupling(&self, name: &str, vertex: &VertexSpec) -> Result<CouplingFunction, CliError> {
        let c = self.couplings.get(name).ok_or_else(|| CliError::Config(format!("no coupling named '{name}'")))?;
        let st = self.spacetime()?;
        let mut out = CouplingFunction::new();
        for term in &c.terms {
            let m = vertex.index_of(&term.monomial).ok_or_else(|| {
                CliError::Config(format!("coupling '{name}' uses unknown monomial '{}'", term.monomial))
            })?;
            for [t, x, re, im] in &term.points {
                let (t, x) = (index_value(*t, name)?, index_value(*x, name)?);
                let p = Point::new(t, x);
                if !st.contains(p) || !st.is_interior(p) {
                    return Err(CliError::Config(format!(
                        "coupling '{name}' has point (t={t}, x={x}) outside the interior rows"
                    )));
                }
                out.set(p, m, out.get(p, m) + C64::new(*re, *im));
            }
        }
        Ok(out)
    }

    pub fn tolerance(&self, check_id: &str, default: f64) -> f64 {
        self.tolerances
            .iter()
            .filter(|(prefix, _)| check_id.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, v)| *v)
            .unwrap_or(default)
    }
}

fn index_value(v: f64, name: &str) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!("coupling '{name}' has a non-integer lattice index {v}")))
    }
}

/// `[t_lo, t_hi, x_lo, x_hi]` as a product region inside the lattice.
pub fn product_region(st: &LatticeSpacetime, b: [usize; 4], what: &str) -> Result<Region, CliError> {
    let [t_lo, t_hi, x_lo, x_hi] = b;
    if t_lo > t_hi || x_lo > x_hi || t_hi >= st.n_t() || x_hi >= st.n_x() {
        return Err(CliError::Config(format!("{what} = {b:?} is not a region inside the lattice")));
    }
    Ok(Region::product(t_lo, t_hi, x_lo, x_hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [lattice]
        n_t = 10
        n_x = 4
        dt = 0.5
        dx = 1.0
        [field]
        mass_sq = 0.5
    "#;

    #[test]
    fn minimal_config_parses() {
        let c = LoadedConfig::from_str(MINIMAL).unwrap();
        assert_eq!(c.config.order, 2);
        assert_eq!(c.config.params.ccr.samples, 20);
        assert_eq!(c.digest.len(), 64);
    }

    #[test]
    fn thin_slab_is_a_config_error() {
        let text = format!("{MINIMAL}\n[slabs.N]\nt_lo = 3\nt_hi = 6\n");
        assert!(matches!(LoadedConfig::from_str(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(LoadedConfig::from_str(&text).is_err());
    }

    #[test]
    fn tolerance_prefix_lookup() {
        let text = format!("{MINIMAL}\n[tolerances]\n\"ccr\" = 1e-3\n\"ccr.commutator\" = 1e-4\n");
        let c = LoadedConfig::from_str(&text).unwrap().config;
        assert_eq!(c.tolerance("ccr.commutator.01", 1.0), 1e-4);
        assert_eq!(c.tolerance("ccr.two-point", 1.0), 1e-3);
        assert_eq!(c.tolerance("green.support", 0.5), 0.5);
    }

    #[test]
    fn couplings_resolve_monomials() {
        let text = format!(
            "{MINIMAL}\n[vertex]\nmonomials = [{{ power = 3, label = \"phi3\" }}]\n\
             [couplings.g]\nterms = [{{ monomial = \"phi3\", points = [[4, 1, 0.5, 0.0], [5, 2, 0.0, 1.0]] }}]\n"
        );
        let c = LoadedConfig::from_str(&text).unwrap().config;
        let g = c.coupling("g", &c.vertex_spec().unwrap()).unwrap();
        assert_eq!(g.len(), 2);
        let bad = text.replace("phi3\", points", "phi4\", points");
        assert!(LoadedConfig::from_str(&bad).is_err());
    }
}
