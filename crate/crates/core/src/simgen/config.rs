//! Declarative simulator configuration and its validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::addr::{Address128, Oui, Prefix};
use crate::analysis::ProviderMap;
use crate::oui::{CategorySet, DeviceCategory, IoTCategory, OuiDatabase, OuiRecord, Taxonomy, TaxonomyEntry};

use super::SimError;

pub const HOUR: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub households: u32,
    /// Unix seconds of the first flow bucket.
    pub start: u64,
    /// Seconds; a multiple of one hour.
    pub duration: u64,
    /// Seconds between prefix rotations; a multiple of one hour.
    pub rotation_period: u64,
    pub p_eui64_household: f64,
    /// Probability that a household with an EUI-64 device also has privacy devices.
    pub p_privacy_with_eui64: f64,
    /// Inclusive device-count range for households with EUI-64 devices.
    pub eui64_devices: [u32; 2],
    /// Inclusive privacy-device-count range, applied when a household has any.
    pub privacy_devices: [u32; 2],
    /// Devices spread uniformly over subnet ids `0..subnets_per_household`.
    pub subnets_per_household: u16,
    /// Seconds between privacy IID regenerations inside an epoch; 0 regenerates once per epoch.
    pub privacy_regen_interval: u64,
    pub exclude_fffe_collisions: bool,
    /// Gives the second EUI-64 household the MAC of the first one.
    pub inject_duplicate_macs: bool,
    pub sampling_rate: u32,
    /// Per device-hour probability of a flow to the fallback destination.
    pub background_probability: f64,
    pub end_user_space: String,
    pub fallback_destination: String,
    pub fallback_port: u16,
    pub periphery: PeripheryConfig,
    pub device_pools: Vec<DevicePool>,
    pub providers: Vec<ProviderConfig>,
    pub signatures: Vec<SignatureConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            households: 1000,
            start: 1_704_067_200,
            duration: 86_400,
            rotation_period: 86_400,
            p_eui64_household: 0.19,
            p_privacy_with_eui64: 0.93,
            eui64_devices: [1, 2],
            privacy_devices: [1, 4],
            subnets_per_household: 1,
            privacy_regen_interval: 0,
            exclude_fffe_collisions: true,
            inject_duplicate_macs: false,
            sampling_rate: 1,
            background_probability: 0.0,
            end_user_space: "2001:db8::/32".into(),
            fallback_destination: "3fff:ffff::1".into(),
            fallback_port: 443,
            periphery: PeripheryConfig::default(),
            device_pools: Vec::new(),
            providers: Vec::new(),
            signatures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeripheryConfig {
    /// Number of /56 prefixes holding CPE WAN addresses; 0 disables CPE traffic.
    pub prefixes: u32,
    pub space: String,
    pub cpe_active_probability: f64,
    pub manufacturer: String,
    pub ouis: Vec<String>,
}

impl Default for PeripheryConfig {
    fn default() -> Self {
        PeripheryConfig {
            prefixes: 0,
            space: "3fff:100::/32".into(),
            cpe_active_probability: 0.0,
            manufacturer: "Example Gateways".into(),
            ouis: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicePool {
    pub name: String,
    /// Registry organization name; defaults to `name`.
    #[serde(default)]
    pub manufacturer: Option<String>,
    pub weight: f64,
    /// `|`-joined device categories.
    pub categories: String,
    #[serde(default)]
    pub iot: Option<String>,
    pub ouis: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub id: String,
    pub prefix: String,
    pub ports: Vec<u16>,
    /// Probability a household uses this provider at all.
    #[serde(default = "one")]
    pub adoption: f64,
    /// Hourly contact probability of an EUI-64 device of an adopting household.
    #[serde(default)]
    pub eui64: f64,
    #[serde(default)]
    pub privacy: f64,
    #[serde(default)]
    pub cpe: f64,
    /// Pool names allowed to contact; empty allows all.
    #[serde(default)]
    pub pools: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureConfig {
    pub product: String,
    /// Provider id or destination prefix.
    pub target: String,
    #[serde(default)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone)]
pub struct ResolvedPool {
    pub name: String,
    pub weight: f64,
    pub ouis: Vec<Oui>,
    pub entry: TaxonomyEntry,
}

#[derive(Debug, Clone)]
pub struct ResolvedProvider {
    pub prefix: Prefix,
    pub ports: Vec<u16>,
    pub adoption: f64,
    /// Hourly contact probability per device class: EUI-64, privacy, CPE.
    pub contact: [f64; 3],
    /// Indexed by pool; `true` when devices of that pool may contact.
    pub allowed: Vec<bool>,
}

/// A validated configuration with every textual field parsed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: SimConfig,
    pub end_user_space: Prefix,
    pub periphery_space: Prefix,
    pub fallback: Address128,
    pub pools: Vec<ResolvedPool>,
    pub cpe_ouis: Vec<Oui>,
    pub providers: Vec<ResolvedProvider>,
    pub provider_map: ProviderMap,
    pub oui_db: OuiDatabase,
    pub taxonomy: Taxonomy,
    pub epochs: u32,
    pub hours: u32,
    pub privacy_slots: u32,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every constraint and reports all violations at once, each
    /// prefixed by its key path.
    pub fn validate(&self) -> Result<Resolved, SimError> {
        let mut v: Vec<String> = Vec::new();
        let prob = |key: String, p: f64, v: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{key}: probability {p} outside [0, 1]"));
            }
        };
        prob("p_eui64_household".into(), self.p_eui64_household, &mut v);
        prob("p_privacy_with_eui64".into(), self.p_privacy_with_eui64, &mut v);
        prob("background_probability".into(), self.background_probability, &mut v);
        prob("periphery.cpe_active_probability".into(), self.periphery.cpe_active_probability, &mut v);

        if self.households == 0 {
            v.push("households: must be at least 1".into());
        }
        if self.duration == 0 || !self.duration.is_multiple_of(HOUR) {
            v.push(format!("duration: {} is not a positive multiple of {HOUR}", self.duration));
        }
        if self.rotation_period == 0 || !self.rotation_period.is_multiple_of(HOUR) {
            v.push(format!("rotation_period: {} is not a positive multiple of {HOUR}", self.rotation_period));
        }
        for (key, [lo, hi]) in [("eui64_devices", self.eui64_devices), ("privacy_devices", self.privacy_devices)] {
            if lo == 0 || lo > hi {
                v.push(format!("{key}: range [{lo}, {hi}] must satisfy 1 <= min <= max"));
            }
        }
        if self.subnets_per_household == 0 || self.subnets_per_household > 256 {
            v.push(format!("subnets_per_household: {} outside 1..=256", self.subnets_per_household));
        }
        if self.sampling_rate == 0 {
            v.push("sampling_rate: must be at least 1".into());
        }
        if self.start.checked_add(self.duration).is_none() {
            v.push("start: start + duration overflows".into());
        }

        let epochs = self.duration.div_ceil(self.rotation_period.max(1)).max(1);
        let privacy_slots = match self.privacy_regen_interval {
            0 => 1,
            r => self.rotation_period.div_ceil(r),
        };

        let space = |key: &str, text: &str, needed: u64, v: &mut Vec<String>| -> Option<Prefix> {
            match text.parse::<Prefix>() {
                Ok(p) if p.len() > 56 => {
                    v.push(format!("{key}: /{} is longer than /56", p.len()));
                    None
                }
                Ok(p) => {
                    let capacity = 1u128 << (56 - p.len());
                    if u128::from(needed) > capacity {
                        v.push(format!("{key}: {text} holds {capacity} /56 prefixes, {needed} needed"));
                    }
                    Some(p)
                }
                Err(e) => {
                    v.push(format!("{key}: {e}"));
                    None
                }
            }
        };
        let end_user_space = space("end_user_space", &self.end_user_space, u64::from(self.households) * epochs, &mut v);
        let periphery_space = space("periphery.space", &self.periphery.space, u64::from(self.periphery.prefixes), &mut v);
        let fallback = match self.fallback_destination.parse::<Address128>() {
            Ok(a) => Some(a),
            Err(e) => {
                v.push(format!("fallback_destination: {e}"));
                None
            }
        };

        let mut seen_ouis: BTreeMap<Oui, String> = BTreeMap::new();
        let mut oui_list = |key: String, list: &[String], v: &mut Vec<String>| -> Vec<Oui> {
            if list.is_empty() {
                v.push(format!("{key}: must be non-empty"));
            }
            let mut out = Vec::new();
            for (i, text) in list.iter().enumerate() {
                match Oui::from_hex(text) {
                    Ok(o) => {
                        if let Some(prev) = seen_ouis.insert(o, key.clone()) {
                            v.push(format!("{key}[{i}]: OUI {text} already used by {prev}"));
                        }
                        out.push(o);
                    }
                    Err(e) => v.push(format!("{key}[{i}]: {e}")),
                }
            }
            out
        };

        if self.device_pools.is_empty() {
            v.push("device_pools: at least one pool is required".into());
        }
        let mut pools = Vec::new();
        let mut names = BTreeSet::new();
        for (i, p) in self.device_pools.iter().enumerate() {
            let key = format!("device_pools[{i}]");
            if !names.insert(p.name.as_str()) {
                v.push(format!("{key}.name: duplicate pool `{}`", p.name));
            }
            if !(p.weight.is_finite() && p.weight >= 0.0) {
                v.push(format!("{key}.weight: {} is not a non-negative number", p.weight));
            }
            let categories = p.categories.parse::<CategorySet>().unwrap_or_else(|e| {
                v.push(format!("{key}.categories: {e}"));
                CategorySet::UNKNOWN
            });
            let iot = match &p.iot {
                Some(t) => t.parse::<IoTCategory>().map_err(|e| v.push(format!("{key}.iot: {e}"))).ok(),
                None => None,
            };
            if iot.is_some() && !categories.is_exactly(DeviceCategory::IoT) {
                v.push(format!("{key}.iot: subcategory requires categories = \"IoT\""));
            }
            let ouis = oui_list(format!("{key}.ouis"), &p.ouis, &mut v);
            pools.push(ResolvedPool {
                name: p.name.clone(),
                weight: p.weight,
                ouis,
                entry: TaxonomyEntry { categories, iot },
            });
        }
        if !pools.is_empty() && pools.iter().map(|p| p.weight).sum::<f64>() <= 0.0 {
            v.push("device_pools: weights sum to zero".into());
        }

        let cpe_ouis = if self.periphery.prefixes > 0 {
            oui_list("periphery.ouis".into(), &self.periphery.ouis, &mut v)
        } else {
            Vec::new()
        };

        let mut provider_map = ProviderMap::default();
        let mut providers = Vec::new();
        for (i, p) in self.providers.iter().enumerate() {
            let key = format!("providers[{i}]");
            if provider_map.id(&p.id).is_some() {
                v.push(format!("{key}.id: duplicate provider `{}`", p.id));
            }
            if p.id.is_empty() || p.id.contains([',', '/']) {
                v.push(format!("{key}.id: `{}` must be non-empty without `,` or `/`", p.id));
            }
            if p.ports.is_empty() {
                v.push(format!("{key}.ports: must be non-empty"));
            }
            prob(format!("{key}.adoption"), p.adoption, &mut v);
            prob(format!("{key}.eui64"), p.eui64, &mut v);
            prob(format!("{key}.privacy"), p.privacy, &mut v);
            prob(format!("{key}.cpe"), p.cpe, &mut v);
            for name in &p.pools {
                if !self.device_pools.iter().any(|d| &d.name == name) {
                    v.push(format!("{key}.pools: unknown pool `{name}`"));
                }
            }
            let allowed = self.device_pools.iter().map(|d| p.pools.is_empty() || p.pools.contains(&d.name)).collect();
            match p.prefix.parse::<Prefix>() {
                Ok(prefix) => {
                    if let Err(e) = provider_map.insert(prefix, &p.id) {
                        v.push(format!("{key}.prefix: {e}"));
                    }
                    providers.push(ResolvedProvider {
                        prefix,
                        ports: p.ports.clone(),
                        adoption: p.adoption,
                        contact: [p.eui64, p.privacy, p.cpe],
                        allowed,
                    });
                }
                Err(e) => v.push(format!("{key}.prefix: {e}")),
            }
        }

        for (i, s) in self.signatures.iter().enumerate() {
            let key = format!("signatures[{i}]");
            if s.product.is_empty() || s.product.contains(',') {
                v.push(format!("{key}.product: `{}` must be non-empty without `,`", s.product));
            }
            if s.target.contains('/') {
                if let Err(e) = s.target.parse::<Prefix>() {
                    v.push(format!("{key}.target: {e}"));
                }
            } else if !self.providers.iter().any(|p| p.id == s.target) {
                v.push(format!("{key}.target: unknown provider `{}`", s.target));
            }
        }

        if !v.is_empty() {
            return Err(SimError::Invalid(v));
        }

        let mut oui_db = OuiDatabase::default();
        let mut taxonomy = Taxonomy::default();
        for (p, cfg) in pools.iter().zip(&self.device_pools) {
            let org = cfg.manufacturer.clone().unwrap_or_else(|| cfg.name.clone());
            for &o in &p.ouis {
                oui_db.insert(OuiRecord { oui: o, organization_name: org.clone(), organization_address: String::new() });
                taxonomy.insert(o, p.entry).expect("checked above");
            }
        }
        for &o in &cpe_ouis {
            oui_db.insert(OuiRecord {
                oui: o,
                organization_name: self.periphery.manufacturer.clone(),
                organization_address: String::new(),
            });
            taxonomy
                .insert(o, TaxonomyEntry { categories: CategorySet::single(DeviceCategory::CPE), iot: None })
                .expect("no IoT subcategory");
        }

        Ok(Resolved {
            config: self.clone(),
            end_user_space: end_user_space.expect("checked"),
            periphery_space: periphery_space.expect("checked"),
            fallback: fallback.expect("checked"),
            pools,
            cpe_ouis,
            providers,
            provider_map,
            oui_db,
            taxonomy,
            epochs: epochs as u32,
            hours: (self.duration / HOUR) as u32,
            privacy_slots: privacy_slots as u32,
        })
    }
}

impl Resolved {
    /// Signature file text in the analyzer's input format.
    pub fn signatures_text(&self) -> String {
        let mut out = String::new();
        for s in &self.config.signatures {
            let port = s.port.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", s.product, s.target, port));
        }
        out
    }
}
