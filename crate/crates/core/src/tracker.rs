//! Per-/56 profiles, rotation linkage via shared EUI-64 IIDs, and periphery
//! (CPE WAN) prefix detection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Iid64, Oui};
use crate::flows::{AnonymizedAddress, PrefixToken};
use crate::oui::{DeviceCategory, Taxonomy};

/// Index of a provider in the provider map.
pub type ProviderId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackerError {
    #[error("prefix {0} has no observed interface identifiers")]
    EmptyProfile(PrefixToken),
}

/// Set of 8-bit subnet ids inside a /56.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SubnetSet([u64; 4]);

impl SubnetSet {
    pub fn single(id: u8) -> Self {
        let mut s = SubnetSet::default();
        s.insert(id);
        s
    }

    pub fn insert(&mut self, id: u8) {
        self.0[usize::from(id >> 6)] |= 1 << (id & 63);
    }

    pub fn contains(&self, id: u8) -> bool {
        self.0[usize::from(id >> 6)] & (1 << (id & 63)) != 0
    }

    pub fn union_with(&mut self, other: &SubnetSet) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a |= b;
        }
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(move |id| self.contains(*id))
    }
}

/// First contact of a provider by each source type within one prefix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProviderContact {
    pub eui64_first: Option<u64>,
    pub other_first: Option<u64>,
}

fn min_opt(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl ProviderContact {
    fn merge(&mut self, other: &ProviderContact) {
        self.eui64_first = min_opt(self.eui64_first, other.eui64_first);
        self.other_first = min_opt(self.other_first, other.other_first);
    }

    /// Moment both source types had contacted the provider.
    pub fn both_since(&self) -> Option<u64> {
        Some(self.eui64_first?.max(self.other_first?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrefixClass {
    Eui64Only,
    NonEui64Only,
    DualType,
}

/// Aggregate of every source address observed in one /56.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixProfile {
    pub prefix_token: PrefixToken,
    /// EUI-64 IIDs with the subnets they appeared in.
    pub eui64_iids: BTreeMap<Iid64, SubnetSet>,
    /// All other IIDs with the subnets they appeared in.
    pub other_iids: BTreeMap<Iid64, SubnetSet>,
    pub providers: BTreeMap<ProviderId, ProviderContact>,
    pub first_seen: u64,
    pub last_seen: u64,
}

impl PrefixProfile {
    pub fn new(prefix_token: PrefixToken) -> Self {
        PrefixProfile {
            prefix_token,
            eui64_iids: BTreeMap::new(),
            other_iids: BTreeMap::new(),
            providers: BTreeMap::new(),
            first_seen: u64::MAX,
            last_seen: 0,
        }
    }

    pub fn observe(&mut self, subnet_id: u8, iid: Iid64, timestamp: u64, provider: Option<ProviderId>) {
        let eui = iid.is_eui64();
        let bucket = if eui { &mut self.eui64_iids } else { &mut self.other_iids };
        bucket.entry(iid).or_default().insert(subnet_id);
        self.first_seen = self.first_seen.min(timestamp);
        self.last_seen = self.last_seen.max(timestamp);
        if let Some(p) = provider {
            let c = self.providers.entry(p).or_default();
            let slot = if eui { &mut c.eui64_first } else { &mut c.other_first };
            *slot = min_opt(*slot, Some(timestamp));
        }
    }

    pub fn merge(&mut self, other: &PrefixProfile) {
        debug_assert_eq!(self.prefix_token, other.prefix_token);
        for (iid, s) in &other.eui64_iids {
            self.eui64_iids.entry(*iid).or_default().union_with(s);
        }
        for (iid, s) in &other.other_iids {
            self.other_iids.entry(*iid).or_default().union_with(s);
        }
        for (p, c) in &other.providers {
            self.providers.entry(*p).or_default().merge(c);
        }
        self.first_seen = self.first_seen.min(other.first_seen);
        self.last_seen = self.last_seen.max(other.last_seen);
    }

    pub fn classify(&self) -> Result<PrefixClass, TrackerError> {
        match (self.eui64_iids.is_empty(), self.other_iids.is_empty()) {
            (false, true) => Ok(PrefixClass::Eui64Only),
            (true, false) => Ok(PrefixClass::NonEui64Only),
            (false, false) => Ok(PrefixClass::DualType),
            (true, true) => Err(TrackerError::EmptyProfile(self.prefix_token)),
        }
    }

    pub fn has_eui64(&self) -> bool {
        !self.eui64_iids.is_empty()
    }

    pub fn subnets(&self) -> SubnetSet {
        let mut s = SubnetSet::default();
        for v in self.eui64_iids.values().chain(self.other_iids.values()) {
            s.union_with(v);
        }
        s
    }

    /// Distinct EUI-64 IIDs per manufacturer OUI.
    pub fn manufacturers(&self) -> BTreeMap<Oui, usize> {
        let mut m = BTreeMap::new();
        for iid in self.eui64_iids.keys() {
            if let Some(oui) = iid.oui() {
                *m.entry(oui).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn eui64_providers(&self) -> BTreeSet<ProviderId> {
        self.providers.iter().filter(|(_, c)| c.eui64_first.is_some()).map(|(p, _)| *p).collect()
    }

    pub fn other_providers(&self) -> BTreeSet<ProviderId> {
        self.providers.iter().filter(|(_, c)| c.other_first.is_some()).map(|(p, _)| *p).collect()
    }
}

/// All prefix profiles of a run. Merging two stores is a set union.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileStore {
    profiles: HashMap<PrefixToken, PrefixProfile>,
}

impl ProfileStore {
    pub fn accumulate(&mut self, src: AnonymizedAddress, timestamp: u64, provider: Option<ProviderId>) {
        self.profiles
            .entry(src.prefix_token)
            .or_insert_with(|| PrefixProfile::new(src.prefix_token))
            .observe(src.subnet_id, src.iid, timestamp, provider);
    }

    pub fn merge(&mut self, other: ProfileStore) {
        for (token, profile) in other.profiles {
            match self.profiles.get_mut(&token) {
                Some(p) => p.merge(&profile),
                None => {
                    self.profiles.insert(token, profile);
                }
            }
        }
    }

    pub fn get(&self, token: PrefixToken) -> Option<&PrefixProfile> {
        self.profiles.get(&token)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Profiles ordered by prefix token.
    pub fn sorted(&self) -> Vec<&PrefixProfile> {
        let mut v: Vec<_> = self.profiles.values().collect();
        v.sort_unstable_by_key(|p| p.prefix_token);
        v
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Least EUI-64 IID of the component; `None` when no member has one.
    pub tracking_iid: Option<Iid64>,
    /// Members in ascending token order.
    pub members: Vec<PrefixToken>,
}

/// Prefixes linked through chains of shared EUI-64 IIDs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrackingTable {
    components: Vec<Component>,
    by_prefix: HashMap<PrefixToken, usize>,
}

impl TrackingTable {
    /// Components with a tracking IID come first, ordered by that IID; the
    /// remaining singletons follow in token order.
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component_of(&self, token: PrefixToken) -> Option<&Component> {
        self.by_prefix.get(&token).map(|&i| &self.components[i])
    }

    pub fn component_index(&self, token: PrefixToken) -> Option<usize> {
        self.by_prefix.get(&token).copied()
    }

    pub fn tracked(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(|c| c.tracking_iid.is_some())
    }

    /// Fraction of tracked components that span two or more prefixes.
    pub fn rotation_fraction(&self) -> Option<f64> {
        let (mut total, mut multi) = (0usize, 0usize);
        for c in self.tracked() {
            total += 1;
            multi += usize::from(c.members.len() > 1);
        }
        (total > 0).then(|| multi as f64 / total as f64)
    }

    /// `component_id,tracking_iid,member_prefix_tokens` rows for tracked components.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component_id,tracking_iid,member_prefix_tokens\n");
        for (i, c) in self.tracked().enumerate() {
            let members: Vec<String> = c.members.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", i, c.tracking_iid.expect("tracked"), members.join(";"));
        }
        out
    }
}

/// Builds the tracking table over the given profiles.
pub fn link_rotations<'a>(profiles: impl IntoIterator<Item = &'a PrefixProfile>) -> TrackingTable {
    let mut profiles: Vec<&PrefixProfile> = profiles.into_iter().collect();
    profiles.sort_unstable_by_key(|p| p.prefix_token);
    profiles.dedup_by_key(|p| p.prefix_token);

    let mut uf = UnionFind::new(profiles.len());
    let mut owner: HashMap<Iid64, usize> = HashMap::new();
    for (idx, p) in profiles.iter().enumerate() {
        for iid in p.eui64_iids.keys() {
            match owner.get(iid) {
                Some(&first) => {
                    uf.union(first, idx);
                }
                None => {
                    owner.insert(*iid, idx);
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for idx in 0..profiles.len() {
        groups.entry(uf.find(idx)).or_default().push(idx);
    }
    let mut components: Vec<Component> = groups
        .into_values()
        .map(|members| Component {
            tracking_iid: members.iter().filter_map(|&i| profiles[i].eui64_iids.keys().next().copied()).min(),
            members: members.iter().map(|&i| profiles[i].prefix_token).collect(),
        })
        .collect();
    components.sort_by_key(|c| (c.tracking_iid.is_none(), c.tracking_iid, c.members[0]));

    let mut by_prefix = HashMap::with_capacity(profiles.len());
    for (i, c) in components.iter().enumerate() {
        for t in &c.members {
            by_prefix.insert(*t, i);
        }
    }
    TrackingTable { components, by_prefix }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeripheryParams {
    /// Minimum distinct EUI-64 IIDs.
    pub min_iids: usize,
    /// Minimum fraction of those IIDs with a CPE manufacturer.
    pub min_cpe_fraction: f64,
}

impl Default for PeripheryParams {
    fn default() -> Self {
        PeripheryParams { min_iids: 64, min_cpe_fraction: 0.9 }
    }
}

impl PeripheryParams {
    pub fn is_periphery(&self, profile: &PrefixProfile, taxonomy: &Taxonomy) -> bool {
        let n = profile.eui64_iids.len();
        if n == 0 || n < self.min_iids {
            return false;
        }
        let cpe = profile
            .eui64_iids
            .keys()
            .filter(|iid| iid.oui().is_some_and(|o| taxonomy.categorize(o).categories.contains(DeviceCategory::CPE)))
            .count();
        cpe as f64 >= self.min_cpe_fraction * n as f64
    }
}

/// Tokens of prefixes that look like dense pools of CPE WAN interfaces.
pub fn detect_periphery<'a>(
    profiles: impl IntoIterator<Item = &'a PrefixProfile>,
    taxonomy: &Taxonomy,
    params: &PeripheryParams,
) -> BTreeSet<PrefixToken> {
    profiles
        .into_iter()
        .filter(|p| params.is_periphery(p, taxonomy))
        .map(|p| p.prefix_token)
        .collect()
}
