//! Checks an analysis of simulated flows against the simulator's ground
//! truth. Expectations are recounted from device ownership, not from the
//! analyzer's profiles.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::addr::{Iid64, Oui, Prefix};
use crate::analysis::aggregate::MQTT_TLS_PORT;
use crate::analysis::{Analysis, AnalysisOptions, VennCounts, VennLevel, WeightedShares};
use crate::flows::{Anonymizer, PrefixToken, PROTO_TCP};
use crate::oui::{CategorySet, DeviceCategory, IoTCategory};
use crate::simgen::{DeviceMode, Simulation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Verification {
    pub checks: Vec<Check>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn expect_eq<T: PartialEq + fmt::Debug>(&mut self, name: &'static str, expected: T, actual: T) {
        let passed = expected == actual;
        let detail = if passed { format!("{actual:?}") } else { format!("expected {expected:?}, analyzer {actual:?}") };
        self.checks.push(Check { name, passed, detail });
    }

    fn expect(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }
}

/// One delegated prefix of one household in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Unit {
    household: u32,
    epoch: u32,
}

#[derive(Debug, Default)]
struct UnitFacts {
    eui: bool,
    privacy: bool,
    eui_subnets: BTreeSet<u8>,
    privacy_subnets: BTreeSet<u8>,
    /// Pool indices of EUI-64 devices seen.
    eui_pools: BTreeSet<usize>,
    /// Provider index -> (EUI-64 contact, privacy contact).
    providers: BTreeMap<usize, (bool, bool)>,
}

/// Recounts every checked quantity from ground truth and compares.
pub fn verify(sim: &Simulation, analysis: &Analysis, anonymizer: Option<&Anonymizer>, opts: &AnalysisOptions) -> Verification {
    let r = &sim.resolved;
    let c = &r.config;
    let token = |p: Prefix| -> PrefixToken {
        let bits = (p.bits() >> 72) as u64;
        anonymizer.map_or(PrefixToken(bits), |a| a.token(bits))
    };
    let provider_of = |dst| {
        r.providers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.prefix.contains(dst))
            .max_by_key(|(_, p)| p.prefix.len())
            .map(|(i, _)| i)
    };

    let mut units: BTreeMap<Unit, UnitFacts> = BTreeMap::new();
    let mut cpe_macs: HashMap<Prefix, HashSet<u64>> = HashMap::new();
    let mut mqtt: HashSet<(Prefix, Iid64)> = HashSet::new();
    let mut mqtt_eui = 0u64;
    let mut privacy_iids: HashSet<Iid64> = HashSet::new();
    let mut oui_iids: BTreeMap<Oui, HashSet<u64>> = BTreeMap::new();
    let mut oui_64s: BTreeMap<Oui, HashSet<(Prefix, u8)>> = BTreeMap::new();
    let mut oui_56s: BTreeMap<Oui, HashSet<Prefix>> = BTreeMap::new();

    for f in &sim.flows {
        let hh = &sim.truth.households[f.household as usize];
        let d = &hh.devices[f.device as usize];
        let epoch = ((f.record.timestamp - c.start) / c.rotation_period) as u32;
        let prefix = match d.mode {
            DeviceMode::Cpe => hh.periphery.expect("cpe has a periphery prefix"),
            _ => hh.prefixes[epoch as usize],
        };
        if d.mode != DeviceMode::Privacy {
            let oui = d.mac.oui();
            oui_iids.entry(oui).or_default().insert(d.mac.to_u64());
            oui_64s.entry(oui).or_default().insert((prefix, d.subnet_id));
            oui_56s.entry(oui).or_default().insert(prefix);
        }
        if f.record.protocol == PROTO_TCP
            && f.record.dst_port == MQTT_TLS_PORT
            && mqtt.insert((prefix, f.record.src.iid()))
            && d.mode != DeviceMode::Privacy
        {
            mqtt_eui += 1;
        }
        if d.mode == DeviceMode::Cpe {
            cpe_macs.entry(prefix).or_default().insert(d.mac.to_u64());
            continue;
        }
        let u = units.entry(Unit { household: hh.id, epoch }).or_default();
        let eui = d.mode == DeviceMode::Eui64;
        if eui {
            u.eui = true;
            u.eui_subnets.insert(d.subnet_id);
            u.eui_pools.insert(d.pool.expect("home device"));
        } else {
            u.privacy = true;
            u.privacy_subnets.insert(d.subnet_id);
            privacy_iids.insert(f.record.src.iid());
        }
        if let Some(p) = provider_of(f.record.dst) {
            let slot = u.providers.entry(p).or_default();
            if eui {
                slot.0 = true;
            } else {
                slot.1 = true;
            }
        }
    }

    let mut v = Verification::default();

    // periphery: every CPE manufacturer is CPE-only, so purity is 1
    let expected_periphery: BTreeSet<PrefixToken> = cpe_macs
        .iter()
        .filter(|(_, macs)| macs.len() >= opts.periphery.min_iids.max(1))
        .map(|(p, _)| token(*p))
        .collect();
    v.expect_eq("periphery_prefixes", expected_periphery, analysis.periphery.clone());

    let at_risk = units.values().filter(|u| u.eui).count() as u64;
    v.expect_eq("end_user_prefixes", units.len() as u64, analysis.end_user_prefixes);
    v.expect_eq("end_user_at_risk", at_risk, analysis.end_user_at_risk);

    let mut venn56 = VennCounts::default();
    let mut venn64 = VennCounts::default();
    for u in units.values() {
        add(&mut venn56, u.eui, u.privacy);
        for s in u.eui_subnets.union(&u.privacy_subnets) {
            add(&mut venn64, u.eui_subnets.contains(s), u.privacy_subnets.contains(s));
        }
    }
    v.expect_eq("venn_end_user_/56", venn56, analysis.venn("end_user", VennLevel::Slash56));
    v.expect_eq("venn_end_user_/64", venn64, analysis.venn("end_user", VennLevel::Slash64));

    // linkage: units of one household with EUI-64 devices form one component
    let mut by_household: BTreeMap<u32, Vec<(Unit, &UnitFacts)>> = BTreeMap::new();
    for (unit, facts) in &units {
        by_household.entry(unit.household).or_default().push((*unit, facts));
    }
    let tracking = &analysis.tracking;
    let owner: HashMap<PrefixToken, u32> = units
        .keys()
        .map(|u| (token(sim.truth.households[u.household as usize].prefixes[u.epoch as usize]), u.household))
        .collect();
    let mut linked = VennCounts::default();
    let (mut recall_ok, mut recall_total, mut singletons_ok, mut singletons_total) = (0u64, 0u64, 0u64, 0u64);
    for (h, list) in &by_household {
        let hh = &sim.truth.households[*h as usize];
        let component = |u: &Unit| tracking.component_index(token(hh.prefixes[u.epoch as usize]));
        if hh.has_eui64() && list.iter().any(|(_, f)| f.eui) {
            recall_total += 1;
            let ids: BTreeSet<Option<usize>> = list.iter().map(|(u, _)| component(u)).collect();
            if ids.len() == 1 && !ids.contains(&None) {
                recall_ok += 1;
            }
            add(&mut linked, list.iter().any(|(_, f)| f.eui), list.iter().any(|(_, f)| f.privacy));
        } else {
            for (u, f) in list {
                singletons_total += 1;
                let single = component(u).is_some_and(|i| tracking.components()[i].members.len() == 1);
                if single {
                    singletons_ok += 1;
                }
                add(&mut linked, f.eui, f.privacy);
            }
        }
    }
    v.expect("linkage_recall", recall_ok == recall_total, format!("{recall_ok}/{recall_total} EUI-64 households in one component"));
    let mut mixed = 0;
    for comp in tracking.components() {
        let owners: BTreeSet<Option<&u32>> = comp.members.iter().map(|t| owner.get(t)).collect();
        if owners.len() > 1 {
            mixed += 1;
        }
    }
    v.expect(
        "linkage_precision",
        mixed == 0,
        format!("{mixed} of {} components span several households", tracking.components().len()),
    );
    v.expect(
        "privacy_only_unlinked",
        singletons_ok == singletons_total,
        format!("{singletons_ok}/{singletons_total} privacy-only prefixes are singletons"),
    );
    v.expect_eq("venn_end_user_/56-linked", linked, analysis.venn("end_user", VennLevel::Slash56Linked));

    let mut per_provider = vec![0u64; r.providers.len()];
    let mut union = 0u64;
    for u in units.values().filter(|u| u.eui && u.privacy) {
        let mut any = false;
        for (p, (e, o)) in &u.providers {
            if *e && *o {
                per_provider[*p] += 1;
                any = true;
            }
        }
        union += u64::from(any);
    }
    v.expect_eq("collateral_per_provider", per_provider, analysis.collateral.per_provider.clone());
    v.expect_eq("collateral_union", union, analysis.collateral.union);

    let mut categories: WeightedShares<CategorySet> = WeightedShares::default();
    let mut iot: WeightedShares<Option<IoTCategory>> = WeightedShares::default();
    for u in units.values().filter(|u| u.eui) {
        let entries: Vec<_> = u.eui_pools.iter().map(|p| r.pools[*p].entry).collect();
        categories.add_unit(&entries.iter().map(|e| e.categories).collect());
        if entries.iter().all(|e| e.categories.is_exactly(DeviceCategory::IoT)) {
            iot.add_unit(&entries.iter().map(|e| e.iot).collect());
        }
    }
    v.expect_eq("category_shares", categories, analysis.category_shares.clone());
    v.expect_eq("iot_composition", iot, analysis.iot_composition.clone());

    let expected_mqtt = (!mqtt.is_empty()).then_some((mqtt_eui, mqtt.len() as u64));
    v.expect_eq("mqtt_sources", expected_mqtt, analysis.mqtt.map(|m| (m.eui64_sources, m.sources)));

    let oui_rows: Vec<(Oui, u64, u64, u64)> = oui_iids
        .iter()
        .map(|(o, iids)| (*o, iids.len() as u64, oui_64s[o].len() as u64, oui_56s[o].len() as u64))
        .collect();
    let mut actual_rows: Vec<(Oui, u64, u64, u64)> =
        analysis.oui_popularity.iter().map(|r| (r.oui, r.distinct_iids, r.distinct_64s, r.distinct_56s)).collect();
    actual_rows.sort();
    v.expect_eq("oui_popularity", oui_rows, actual_rows);

    v.expect_eq("hamming_samples", privacy_iids.len() as u64, analysis.hamming.samples);
    match analysis.hamming.p_value() {
        Some(p) => v.expect(
            "hamming_fit",
            p > opts.hamming_p_threshold,
            format!("p = {p:.4e} against threshold {}", opts.hamming_p_threshold),
        ),
        None => v.expect("hamming_fit", true, "skipped: sample below minimum".into()),
    }
    v
}

fn add(v: &mut VennCounts, eui: bool, other: bool) {
    match (eui, other) {
        (true, true) => v.both += 1,
        (true, false) => v.eui64_only += 1,
        (false, true) => v.non_eui64_only += 1,
        (false, false) => {}
    }
}
