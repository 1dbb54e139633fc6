//! Brute-force recomputation of every analysis table from raw flow records.
//! Works on cleartext addresses with plain integer arithmetic and shares no
//! counting code with the analyzer.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use sixtrace::addr::{Oui, Prefix};
use sixtrace::analysis::signatures::{SignatureSet, Target};
use sixtrace::flows::FlowRecord;
use sixtrace::oui::{CategorySet, DeviceCategory, IoTCategory, OuiDatabase, Taxonomy};

pub fn is_eui(iid: u64) -> bool {
    (iid >> 24) & 0xffff == 0xfffe
}

pub fn oui_of(iid: u64) -> Oui {
    let b = iid.to_be_bytes();
    Oui([b[0] ^ 0x02, b[1], b[2]])
}

fn p56(a: u128) -> u64 {
    (a >> 72) as u64
}

fn subnet(a: u128) -> u8 {
    (a >> 64) as u8
}

fn iid(a: u128) -> u64 {
    a as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Venn {
    pub eui_only: u64,
    pub both: u64,
    pub other_only: u64,
}

impl Venn {
    fn add(&mut self, e: bool, o: bool) {
        match (e, o) {
            (true, false) => self.eui_only += 1,
            (true, true) => self.both += 1,
            (false, true) => self.other_only += 1,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Point {
    pub eui_addresses: u64,
    pub eui_iids: u64,
    pub other_addresses: u64,
    pub other_iids: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Expected {
    pub periphery: usize,
    pub end_user: u64,
    pub at_risk: u64,
    /// (scope, level) -> counts; levels named as in venn.csv.
    pub venn: BTreeMap<(String, String), Venn>,
    pub components_with_eui: u64,
    /// (oui, organization, iids, /64s, /56s) in rank order.
    pub oui_rows: Vec<(Oui, Option<String>, u64, u64, u64)>,
    /// key -> split size -> units, and the unit total.
    pub categories: (u64, BTreeMap<CategorySet, BTreeMap<u32, u64>>),
    pub iot: (u64, BTreeMap<Option<IoTCategory>, BTreeMap<u32, u64>>),
    pub mqtt: Option<(u64, u64)>,
    pub heat_ouis: Vec<Oui>,
    pub heat_ports: Vec<u16>,
    pub heat: Vec<Vec<u64>>,
    pub collateral: Vec<u64>,
    pub collateral_union: u64,
    pub dual_type: u64,
    pub collateral_series: Vec<Vec<u64>>,
    pub timeseries: Vec<Vec<Point>>,
    /// Weight histogram of distinct non-EUI-64 IIDs.
    pub hamming: Vec<u64>,
}

pub struct OracleInput<'a> {
    pub flows: &'a [FlowRecord],
    pub db: &'a OuiDatabase,
    pub taxonomy: &'a Taxonomy,
    /// Provider rules as (prefix, provider index).
    pub rules: Vec<(Prefix, usize)>,
    pub n_providers: usize,
    pub signatures: &'a SignatureSet,
    pub product_ouis: BTreeSet<Oui>,
    pub min_iids: usize,
    pub min_cpe_fraction: f64,
    pub top_ouis: usize,
    pub top_ports: usize,
    pub bucket: u64,
    pub min_hits: usize,
}

impl OracleInput<'_> {
    fn provider(&self, dst: u128) -> Option<usize> {
        let mut best: Option<(u8, usize)> = None;
        for (p, id) in &self.rules {
            let len = p.len();
            let mask = if len == 0 { 0 } else { u128::MAX << (128 - u32::from(len)) };
            if dst & mask == p.bits() && best.is_none_or(|(l, _)| len > l) {
                best = Some((len, *id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn categories(&self, o: Oui) -> CategorySet {
        self.taxonomy.categorize(o).categories
    }
}

/// Cumulative counts per bucket: entry `b` counts times in buckets `0..=b`.
fn cumulative(times: &[u64], start: u64, bucket: u64, buckets: usize) -> Vec<u64> {
    (0..buckets)
        .map(|b| {
            let end = start + (b as u64 + 1) * bucket;
            times.iter().filter(|&&t| t < end || b + 1 == buckets).count() as u64
        })
        .collect()
}

pub fn recompute(inp: &OracleInput<'_>) -> Expected {
    let mut out = Expected::default();
    let flows = inp.flows;

    // per /56: EUI-64 IIDs, other IIDs
    let mut eui_iids: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    let mut other_iids: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for f in flows {
        let a = f.src.0;
        let target = if is_eui(iid(a)) { &mut eui_iids } else { &mut other_iids };
        target.entry(p56(a)).or_default().insert(iid(a));
    }
    let all: BTreeSet<u64> = eui_iids.keys().chain(other_iids.keys()).copied().collect();

    let periphery: BTreeSet<u64> = all
        .iter()
        .copied()
        .filter(|p| {
            let Some(iids) = eui_iids.get(p) else { return false };
            let cpe = iids.iter().filter(|i| inp.categories(oui_of(**i)).contains(DeviceCategory::CPE)).count();
            iids.len() >= inp.min_iids.max(1) && cpe as f64 >= inp.min_cpe_fraction * iids.len() as f64
        })
        .collect();
    out.periphery = periphery.len();
    let end_user: BTreeSet<u64> = all.difference(&periphery).copied().collect();
    out.end_user = end_user.len() as u64;
    out.at_risk = end_user.iter().filter(|p| eui_iids.contains_key(p)).count() as u64;

    // linkage by repeated relabelling until stable
    let mut label: BTreeMap<u64, u64> = end_user.iter().map(|p| (*p, *p)).collect();
    loop {
        let mut by_iid: BTreeMap<u64, u64> = BTreeMap::new();
        for p in &end_user {
            for i in eui_iids.get(p).into_iter().flatten() {
                let l = label[p];
                let e = by_iid.entry(*i).or_insert(l);
                *e = (*e).min(l);
            }
        }
        let mut changed = false;
        for p in &end_user {
            for i in eui_iids.get(p).into_iter().flatten() {
                if by_iid[i] < label[p] {
                    label.insert(*p, by_iid[i]);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut by_prefix: BTreeMap<u64, Vec<u128>> = BTreeMap::new();
    for f in flows {
        by_prefix.entry(p56(f.src.0)).or_default().push(f.src.0);
    }
    for (scope, set) in [("all", &all), ("end_user", &end_user)] {
        let mut addr = Venn::default();
        let mut s64 = Venn::default();
        let mut s56 = Venn::default();
        let mut linked = Venn::default();
        let mut groups: BTreeMap<u64, (bool, bool)> = BTreeMap::new();
        for p in set.iter() {
            let mut addrs: BTreeSet<(u8, u64)> = BTreeSet::new();
            let mut nets: BTreeMap<u8, (bool, bool)> = BTreeMap::new();
            for &a in &by_prefix[p] {
                addrs.insert((subnet(a), iid(a)));
                let n = nets.entry(subnet(a)).or_default();
                if is_eui(iid(a)) {
                    n.0 = true;
                } else {
                    n.1 = true;
                }
            }
            for (_, i) in &addrs {
                addr.add(is_eui(*i), !is_eui(*i));
            }
            for (e, o) in nets.values() {
                s64.add(*e, *o);
            }
            let (e, o) = (eui_iids.contains_key(p), other_iids.contains_key(p));
            s56.add(e, o);
            // an end-user prefix with EUI-64 sources joins its linkage group
            match label.get(p) {
                Some(l) if e => {
                    let g = groups.entry(*l).or_default();
                    g.0 |= e;
                    g.1 |= o;
                }
                _ => linked.add(e, o),
            }
        }
        for (e, o) in groups.values() {
            linked.add(*e, *o);
        }
        if scope == "end_user" {
            out.components_with_eui = groups.len() as u64;
        }
        for (level, v) in [("address", addr), ("/64", s64), ("/56", s56), ("/56-linked", linked)] {
            out.venn.insert((scope.to_string(), level.to_string()), v);
        }
    }

    out.hamming = vec![0; 65];
    let distinct_other: BTreeSet<u64> = other_iids.values().flatten().copied().collect();
    for i in distinct_other {
        out.hamming[i.count_ones() as usize] += 1;
    }

    // manufacturers over every prefix
    // oui -> (IIDs, (/56, subnet) pairs, /56s)
    type Seen = (BTreeSet<u64>, BTreeSet<(u64, u8)>, BTreeSet<u64>);
    let mut per_oui: BTreeMap<Oui, Seen> = BTreeMap::new();
    for f in flows {
        let a = f.src.0;
        if is_eui(iid(a)) {
            let e = per_oui.entry(oui_of(iid(a))).or_default();
            e.0.insert(iid(a));
            e.1.insert((p56(a), subnet(a)));
            e.2.insert(p56(a));
        }
    }
    let mut rows: Vec<_> = per_oui
        .iter()
        .map(|(o, (i, n, p))| (*o, inp.db.organization(*o).map(str::to_string), i.len() as u64, n.len() as u64, p.len() as u64))
        .collect();
    rows.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    out.oui_rows = rows;

    // equal-split shares over end-user prefixes with EUI-64 sources
    for p in end_user.iter().filter(|p| eui_iids.contains_key(p)) {
        let ouis: BTreeSet<Oui> = eui_iids[p].iter().map(|i| oui_of(*i)).collect();
        let combos: BTreeSet<CategorySet> = ouis.iter().map(|o| inp.categories(*o)).collect();
        out.categories.0 += 1;
        for c in &combos {
            *out.categories.1.entry(*c).or_default().entry(combos.len() as u32).or_default() += 1;
        }
        if ouis.iter().all(|o| inp.categories(*o) == CategorySet::single(DeviceCategory::IoT)) {
            let fams: BTreeSet<Option<IoTCategory>> = ouis.iter().map(|o| inp.taxonomy.categorize(*o).iot).collect();
            out.iot.0 += 1;
            for f in &fams {
                *out.iot.1.entry(*f).or_default().entry(fams.len() as u32).or_default() += 1;
            }
        }
    }

    let mqtt: BTreeSet<(u64, u64)> =
        flows.iter().filter(|f| f.protocol == 6 && f.dst_port == 8883).map(|f| (p56(f.src.0), iid(f.src.0))).collect();
    if !mqtt.is_empty() {
        out.mqtt = Some((mqtt.iter().filter(|(_, i)| is_eui(*i)).count() as u64, mqtt.len() as u64));
    }

    // port heatmap
    let mut cell: BTreeMap<(Oui, u16), BTreeSet<(u64, u64)>> = BTreeMap::new();
    let mut oui_sources: BTreeMap<Oui, BTreeSet<(u64, u64)>> = BTreeMap::new();
    for f in flows.iter().filter(|f| is_eui(iid(f.src.0))) {
        let key = (p56(f.src.0), iid(f.src.0));
        let o = oui_of(key.1);
        cell.entry((o, f.dst_port)).or_default().insert(key);
        oui_sources.entry(o).or_default().insert(key);
    }
    let mut ranked: Vec<(Oui, usize)> = oui_sources.iter().map(|(o, s)| (*o, s.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out.heat_ouis = ranked.iter().take(inp.top_ouis).map(|r| r.0).collect();
    let mut port_total: BTreeMap<u16, u64> = BTreeMap::new();
    for ((o, port), s) in &cell {
        if out.heat_ouis.contains(o) {
            *port_total.entry(*port).or_default() += s.len() as u64;
        }
    }
    let mut ports: Vec<(u16, u64)> = port_total.into_iter().collect();
    ports.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out.heat_ports = ports.iter().take(inp.top_ports).map(|p| p.0).collect();
    out.heat = out
        .heat_ouis
        .iter()
        .map(|o| out.heat_ports.iter().map(|p| cell.get(&(*o, *p)).map_or(0, |s| s.len() as u64)).collect())
        .collect();

    // window
    let min_ts = flows.iter().map(|f| f.timestamp).min().unwrap_or(0);
    let max_ts = flows.iter().map(|f| f.timestamp).max().unwrap_or(0);
    let start = min_ts / inp.bucket * inp.bucket;
    let buckets = ((max_ts - start) / inp.bucket + 1) as usize;

    // collateral: first time both source types reached a provider
    let mut first: BTreeMap<(u64, usize), (Option<u64>, Option<u64>)> = BTreeMap::new();
    for f in flows {
        let p = p56(f.src.0);
        if !end_user.contains(&p) {
            continue;
        }
        if let Some(prov) = inp.provider(f.dst.0) {
            let e = first.entry((p, prov)).or_default();
            let slot = if is_eui(iid(f.src.0)) { &mut e.0 } else { &mut e.1 };
            *slot = Some(slot.map_or(f.timestamp, |t| t.min(f.timestamp)));
        }
    }
    let dual: BTreeSet<u64> = end_user.iter().copied().filter(|p| eui_iids.contains_key(p) && other_iids.contains_key(p)).collect();
    out.dual_type = dual.len() as u64;
    let mut times: Vec<Vec<u64>> = vec![Vec::new(); inp.n_providers + 1];
    let mut union_time: BTreeMap<u64, u64> = BTreeMap::new();
    for ((p, prov), (e, o)) in &first {
        if let (Some(e), Some(o), true) = (e, o, dual.contains(p)) {
            let t = (*e).max(*o);
            times[*prov].push(t);
            let u = union_time.entry(*p).or_insert(t);
            *u = (*u).min(t);
        }
    }
    out.collateral = times[..inp.n_providers].iter().map(|t| t.len() as u64).collect();
    out.collateral_union = union_time.len() as u64;
    times[inp.n_providers] = union_time.values().copied().collect();
    out.collateral_series = times.iter().map(|t| cumulative(t, start, inp.bucket, buckets)).collect();

    // product series
    for product in &inp.signatures.products {
        let mut hits: BTreeMap<u128, BTreeMap<usize, u64>> = BTreeMap::new();
        for f in flows {
            let a = f.src.0;
            if is_eui(iid(a)) && !inp.product_ouis.is_empty() && !inp.product_ouis.contains(&oui_of(iid(a))) {
                continue;
            }
            let prov = inp.provider(f.dst.0);
            for (idx, el) in product.elements.iter().enumerate() {
                let hit = match el.target {
                    Target::Provider(id) => prov == Some(id as usize),
                    Target::Prefix(p) => Prefix::truncate(f.dst, p.len()) == p,
                };
                if hit && el.port.is_none_or(|port| port == f.dst_port) {
                    let t = hits.entry(a).or_default().entry(idx).or_insert(f.timestamp);
                    *t = (*t).min(f.timestamp);
                }
            }
        }
        let need = inp.min_hits.max(1);
        let joined: BTreeMap<u128, u64> = hits
            .iter()
            .filter(|(_, h)| h.len() >= need)
            .map(|(a, h)| {
                let mut t: Vec<u64> = h.values().copied().collect();
                t.sort();
                (*a, t[need - 1])
            })
            .collect();
        let series: Vec<Point> = (0..buckets)
            .map(|b| {
                let end = start + (b as u64 + 1) * inp.bucket;
                let upto: Vec<(&u128, &u64)> = joined.iter().filter(|(_, t)| **t < end || b + 1 == buckets).collect();
                let count = |eui: bool| {
                    let addrs = upto.iter().filter(|(a, _)| is_eui(iid(**a)) == eui).count() as u64;
                    let iids: BTreeSet<u64> = upto.iter().filter(|(a, _)| is_eui(iid(**a)) == eui).map(|(a, _)| iid(**a)).collect();
                    (addrs, iids.len() as u64)
                };
                let (ea, ei) = count(true);
                let (oa, oi) = count(false);
                Point { eui_addresses: ea, eui_iids: ei, other_addresses: oa, other_iids: oi }
            })
            .collect();
        out.timeseries.push(series);
    }
    out
}
