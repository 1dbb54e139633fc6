//! Result tables computed from accumulated profiles and aggregates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::addr::{Iid64, Oui};
use crate::flows::PrefixToken;
use crate::oui::{CategorySet, DeviceCategory, IoTCategory, OuiDatabase, Taxonomy};
use crate::tracker::{PrefixClass, PrefixProfile, ProviderId, TrackingTable};

use super::aggregate::{ProductContacts, SourceAddr, SourceKey};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VennCounts {
    pub eui64_only: u64,
    pub both: u64,
    pub non_eui64_only: u64,
}

impl VennCounts {
    fn add(&mut self, eui: bool, other: bool) {
        match (eui, other) {
            (true, false) => self.eui64_only += 1,
            (true, true) => self.both += 1,
            (false, true) => self.non_eui64_only += 1,
            (false, false) => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.eui64_only + self.both + self.non_eui64_only
    }

    pub fn with_eui64(&self) -> u64 {
        self.eui64_only + self.both
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VennLevel {
    Address,
    Slash64,
    Slash56,
    /// /56 prefixes with rotation-linked prefixes counted once.
    Slash56Linked,
}

impl VennLevel {
    pub const ALL: [VennLevel; 4] = [VennLevel::Address, VennLevel::Slash64, VennLevel::Slash56, VennLevel::Slash56Linked];

    pub fn as_str(self) -> &'static str {
        match self {
            VennLevel::Address => "address",
            VennLevel::Slash64 => "/64",
            VennLevel::Slash56 => "/56",
            VennLevel::Slash56Linked => "/56-linked",
        }
    }
}

/// Counts of EUI-64-only, dual-type and non-EUI-64-only units at `level`.
/// At address level an address is one type or the other, so `both` is 0.
pub fn venn_counts<'a>(
    profiles: impl IntoIterator<Item = &'a PrefixProfile>,
    tracking: &TrackingTable,
    level: VennLevel,
) -> VennCounts {
    let mut v = VennCounts::default();
    match level {
        VennLevel::Address => {
            for p in profiles {
                v.eui64_only += p.eui64_iids.values().map(|s| s.len() as u64).sum::<u64>();
                v.non_eui64_only += p.other_iids.values().map(|s| s.len() as u64).sum::<u64>();
            }
        }
        VennLevel::Slash64 => {
            for p in profiles {
                let mut kinds = [(false, false); 256];
                for s in p.eui64_iids.values() {
                    for id in s.iter() {
                        kinds[usize::from(id)].0 = true;
                    }
                }
                for s in p.other_iids.values() {
                    for id in s.iter() {
                        kinds[usize::from(id)].1 = true;
                    }
                }
                for (e, o) in kinds {
                    v.add(e, o);
                }
            }
        }
        VennLevel::Slash56 => {
            for p in profiles {
                v.add(p.has_eui64(), !p.other_iids.is_empty());
            }
        }
        VennLevel::Slash56Linked => {
            let mut linked: BTreeMap<usize, (bool, bool)> = BTreeMap::new();
            for p in profiles {
                let (e, o) = (p.has_eui64(), !p.other_iids.is_empty());
                match tracking.component_index(p.prefix_token) {
                    Some(i) if tracking.components()[i].tracking_iid.is_some() => {
                        let slot = linked.entry(i).or_default();
                        slot.0 |= e;
                        slot.1 |= o;
                    }
                    _ => v.add(e, o),
                }
            }
            for (e, o) in linked.into_values() {
                v.add(e, o);
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuiPopularityRow {
    pub oui: Oui,
    pub organization: Option<String>,
    pub distinct_iids: u64,
    pub distinct_64s: u64,
    pub distinct_56s: u64,
}

/// Manufacturers of EUI-64 IIDs, most IIDs first (ties by OUI).
pub fn oui_popularity<'a>(profiles: impl IntoIterator<Item = &'a PrefixProfile>, db: &OuiDatabase) -> Vec<OuiPopularityRow> {
    #[derive(Default)]
    struct Acc {
        iids: HashSet<Iid64>,
        s64: u64,
        s56: u64,
    }
    let mut by_oui: BTreeMap<Oui, Acc> = BTreeMap::new();
    for p in profiles {
        let mut per_prefix: BTreeMap<Oui, crate::tracker::SubnetSet> = BTreeMap::new();
        for (iid, subnets) in &p.eui64_iids {
            let Some(oui) = iid.oui() else { continue };
            by_oui.entry(oui).or_default().iids.insert(*iid);
            per_prefix.entry(oui).or_default().union_with(subnets);
        }
        for (oui, subnets) in per_prefix {
            let acc = by_oui.get_mut(&oui).expect("inserted above");
            acc.s56 += 1;
            acc.s64 += subnets.len() as u64;
        }
    }
    let mut rows: Vec<OuiPopularityRow> = by_oui
        .into_iter()
        .map(|(oui, a)| OuiPopularityRow {
            oui,
            organization: db.organization(oui).map(str::to_string),
            distinct_iids: a.iids.len() as u64,
            distinct_64s: a.s64,
            distinct_56s: a.s56,
        })
        .collect();
    rows.sort_by(|a, b| b.distinct_iids.cmp(&a.distinct_iids).then(a.oui.cmp(&b.oui)));
    rows
}

/// Manufacturer count when OUIs are grouped by exact organization name;
/// unregistered OUIs count individually.
pub fn distinct_manufacturers(rows: &[OuiPopularityRow]) -> usize {
    let mut names: BTreeSet<String> = BTreeSet::new();
    for r in rows {
        names.insert(match &r.organization {
            Some(n) => format!("name:{n}"),
            None => format!("oui:{}", r.oui.to_hex()),
        });
    }
    names.len()
}

/// Equal-split weighting: each unit contributes weight 1 divided evenly among
/// the distinct keys it carries. Stored as integer tallies per split size so
/// that equality checks are exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedShares<K: Ord> {
    pub total: u64,
    /// key -> split size -> number of units
    pub parts: BTreeMap<K, BTreeMap<u32, u64>>,
}

impl<K: Ord> Default for WeightedShares<K> {
    fn default() -> Self {
        WeightedShares { total: 0, parts: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> WeightedShares<K> {
    /// Adds one unit carrying `keys`; units without keys are ignored.
    pub fn add_unit(&mut self, keys: &BTreeSet<K>) {
        if keys.is_empty() {
            return;
        }
        self.total += 1;
        let k = keys.len() as u32;
        for key in keys {
            *self.parts.entry(key.clone()).or_default().entry(k).or_insert(0) += 1;
        }
    }

    pub fn weight(&self, key: &K) -> f64 {
        self.parts.get(key).map_or(0.0, |m| m.iter().map(|(k, c)| *c as f64 / f64::from(*k)).sum())
    }

    pub fn share(&self, key: &K) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.weight(key) / self.total as f64
        }
    }

    /// (key, weight, share) in key order.
    pub fn rows(&self) -> Vec<(K, f64, f64)> {
        self.parts.keys().map(|k| (k.clone(), self.weight(k), self.share(k))).collect()
    }
}

fn manufacturer_categories(p: &PrefixProfile, taxonomy: &Taxonomy) -> BTreeMap<Oui, CategorySet> {
    p.eui64_iids.keys().filter_map(|i| i.oui()).map(|o| (o, taxonomy.categorize(o).categories)).collect()
}

/// Share of prefixes per category combination of their EUI-64 manufacturers.
/// Callers pass end-user prefixes; prefixes without EUI-64 IIDs are ignored.
pub fn category_shares<'a>(
    profiles: impl IntoIterator<Item = &'a PrefixProfile>,
    taxonomy: &Taxonomy,
) -> WeightedShares<CategorySet> {
    let mut shares = WeightedShares::default();
    for p in profiles {
        let combos: BTreeSet<CategorySet> = manufacturer_categories(p, taxonomy).into_values().collect();
        shares.add_unit(&combos);
    }
    shares
}

/// IoT product families over prefixes whose EUI-64 manufacturers all build
/// IoT devices exclusively. `None` is an IoT manufacturer without a family.
pub fn iot_composition<'a>(
    profiles: impl IntoIterator<Item = &'a PrefixProfile>,
    taxonomy: &Taxonomy,
) -> WeightedShares<Option<IoTCategory>> {
    let mut shares = WeightedShares::default();
    for p in profiles {
        let cats = manufacturer_categories(p, taxonomy);
        if cats.is_empty() || !cats.values().all(|c| c.is_exactly(DeviceCategory::IoT)) {
            continue;
        }
        let families: BTreeSet<Option<IoTCategory>> = cats.keys().map(|o| taxonomy.categorize(*o).iot).collect();
        shares.add_unit(&families);
    }
    shares
}

/// Time axis aligned to multiples of the bucket width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub bucket: u64,
    pub buckets: usize,
}

impl Window {
    pub fn covering(min_ts: u64, max_ts: u64, bucket: u64) -> Self {
        assert!(bucket > 0 && max_ts >= min_ts);
        let start = min_ts - min_ts % bucket;
        let buckets = ((max_ts - start) / bucket + 1) as usize;
        Window { start, bucket, buckets }
    }

    pub fn bucket_start(&self, i: usize) -> u64 {
        self.start + i as u64 * self.bucket
    }

    pub fn index_of(&self, ts: u64) -> usize {
        (((ts.max(self.start)) - self.start) / self.bucket) as usize
    }

    /// Cumulative count per bucket of events at the given times.
    pub fn cumulative(&self, times: impl IntoIterator<Item = u64>) -> Vec<u64> {
        let mut per = vec![0u64; self.buckets];
        for t in times {
            per[self.index_of(t).min(self.buckets - 1)] += 1;
        }
        let mut acc = 0;
        per.iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeriesPoint {
    pub bucket_start: u64,
    pub eui64_addresses: u64,
    pub eui64_iids: u64,
    pub non_eui64_addresses: u64,
    pub non_eui64_iids: u64,
}

/// Cumulative distinct product addresses and IIDs per bucket. An address
/// joins the product when it has contacted `min_hits` signature elements.
pub fn product_timeseries(contacts: &ProductContacts, min_hits: usize, window: &Window) -> Vec<SeriesPoint> {
    let min_hits = min_hits.max(1);
    let mut addr_entry: BTreeMap<SourceAddr, u64> = BTreeMap::new();
    for (addr, elems) in contacts {
        if elems.len() < min_hits {
            continue;
        }
        let mut times: Vec<u64> = elems.values().copied().collect();
        times.sort_unstable();
        addr_entry.insert(*addr, times[min_hits - 1]);
    }
    let mut iid_entry: BTreeMap<Iid64, u64> = BTreeMap::new();
    for (a, t) in &addr_entry {
        let slot = iid_entry.entry(a.iid).or_insert(*t);
        *slot = (*slot).min(*t);
    }
    let split = |eui: bool| {
        let addrs = window.cumulative(addr_entry.iter().filter(|(a, _)| a.iid.is_eui64() == eui).map(|(_, t)| *t));
        let iids = window.cumulative(iid_entry.iter().filter(|(i, _)| i.is_eui64() == eui).map(|(_, t)| *t));
        (addrs, iids)
    };
    let (ea, ei) = split(true);
    let (na, ni) = split(false);
    (0..window.buckets)
        .map(|b| SeriesPoint {
            bucket_start: window.bucket_start(b),
            eui64_addresses: ea[b],
            eui64_iids: ei[b],
            non_eui64_addresses: na[b],
            non_eui64_iids: ni[b],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MqttShare {
    pub eui64_sources: u64,
    pub sources: u64,
}

impl MqttShare {
    pub fn fraction(&self) -> f64 {
        self.eui64_sources as f64 / self.sources as f64
    }
}

/// EUI-64 share of distinct sources seen on TCP/8883; `None` without any.
pub fn mqtt_proxy(sources: &HashSet<SourceKey>) -> Option<MqttShare> {
    if sources.is_empty() {
        return None;
    }
    Some(MqttShare {
        eui64_sources: sources.iter().filter(|s| s.iid.is_eui64()).count() as u64,
        sources: sources.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collateral {
    pub end_user_prefixes: u64,
    pub dual_type_prefixes: u64,
    /// Indexed by provider id.
    pub per_provider: Vec<u64>,
    /// Prefixes exposed to at least one provider.
    pub union: u64,
    /// Cumulative per-provider counts per bucket, then the union series last.
    pub series: Vec<Vec<u64>>,
}

impl Collateral {
    pub fn fraction(&self, provider: ProviderId) -> Option<f64> {
        (self.end_user_prefixes > 0).then(|| self.per_provider[provider as usize] as f64 / self.end_user_prefixes as f64)
    }

    pub fn union_fraction(&self) -> Option<f64> {
        (self.end_user_prefixes > 0).then(|| self.union as f64 / self.end_user_prefixes as f64)
    }
}

/// Dual-type prefixes in which both an EUI-64 and a non-EUI-64 source
/// contacted the same provider. Callers pass end-user prefixes only.
pub fn collateral_leakage<'a>(
    profiles: impl IntoIterator<Item = &'a PrefixProfile>,
    providers: usize,
    window: Option<&Window>,
) -> Collateral {
    let mut c = Collateral {
        end_user_prefixes: 0,
        dual_type_prefixes: 0,
        per_provider: vec![0; providers],
        union: 0,
        series: Vec::new(),
    };
    let mut since: Vec<Vec<u64>> = vec![Vec::new(); providers + 1];
    for p in profiles {
        c.end_user_prefixes += 1;
        if p.classify() != Ok(PrefixClass::DualType) {
            continue;
        }
        c.dual_type_prefixes += 1;
        let mut earliest: Option<u64> = None;
        for (pid, contact) in &p.providers {
            if let Some(t) = contact.both_since() {
                c.per_provider[*pid as usize] += 1;
                since[*pid as usize].push(t);
                earliest = Some(earliest.map_or(t, |e| e.min(t)));
            }
        }
        if let Some(t) = earliest {
            c.union += 1;
            since[providers].push(t);
        }
    }
    if let Some(w) = window {
        c.series = since.into_iter().map(|times| w.cumulative(times)).collect();
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PortHeatmap {
    pub ouis: Vec<Oui>,
    pub ports: Vec<u16>,
    /// `counts[row][col]`: distinct sources of `ouis[row]` on `ports[col]`.
    pub counts: Vec<Vec<u64>>,
}

/// Top manufacturers (by distinct EUI-64 sources) against their top ports.
pub fn port_heatmap(port_sources: &HashMap<(Oui, u16), HashSet<SourceKey>>, top_ouis: usize, top_ports: usize) -> PortHeatmap {
    let mut per_oui: BTreeMap<Oui, HashSet<SourceKey>> = BTreeMap::new();
    for ((oui, _), s) in port_sources {
        per_oui.entry(*oui).or_default().extend(s.iter().copied());
    }
    let mut ranked: Vec<(Oui, usize)> = per_oui.into_iter().map(|(o, s)| (o, s.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ouis: Vec<Oui> = ranked.into_iter().take(top_ouis).map(|(o, _)| o).collect();
    let chosen: BTreeSet<Oui> = ouis.iter().copied().collect();

    let mut port_totals: BTreeMap<u16, u64> = BTreeMap::new();
    for ((oui, port), s) in port_sources {
        if chosen.contains(oui) {
            *port_totals.entry(*port).or_insert(0) += s.len() as u64;
        }
    }
    let mut ports: Vec<(u16, u64)> = port_totals.into_iter().collect();
    ports.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ports: Vec<u16> = ports.into_iter().take(top_ports).map(|(p, _)| p).collect();

    let counts = ouis
        .iter()
        .map(|o| ports.iter().map(|p| port_sources.get(&(*o, *p)).map_or(0, |s| s.len() as u64)).collect())
        .collect();
    PortHeatmap { ouis, ports, counts }
}

/// Periphery-free view of the profiles.
pub fn end_user<'a>(profiles: &[&'a PrefixProfile], periphery: &BTreeSet<PrefixToken>) -> Vec<&'a PrefixProfile> {
    profiles.iter().copied().filter(|p| !periphery.contains(&p.prefix_token)).collect()
}
