//! Single-pass, mergeable accumulation of everything the report needs from
//! the raw flow stream.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::addr::{Iid64, Oui};
use crate::flows::{parse_flow, AnonymizedAddress, Anonymizer, FlowRecord, IngestCounts, Parsed, PrefixToken, PROTO_TCP};
use crate::tracker::ProfileStore;

use super::providers::ProviderMap;
use super::signatures::SignatureSet;

pub const MQTT_TLS_PORT: u16 = 8883;

/// A source device within one prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceKey {
    pub prefix_token: PrefixToken,
    pub iid: Iid64,
}

/// A full source address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceAddr {
    pub prefix_token: PrefixToken,
    pub subnet_id: u8,
    pub iid: Iid64,
}

impl From<AnonymizedAddress> for SourceAddr {
    fn from(a: AnonymizedAddress) -> Self {
        SourceAddr { prefix_token: a.prefix_token, subnet_id: a.subnet_id, iid: a.iid }
    }
}

impl SourceAddr {
    pub fn key(self) -> SourceKey {
        SourceKey { prefix_token: self.prefix_token, iid: self.iid }
    }
}

pub struct IngestContext<'a> {
    /// `None` keeps subscriber prefixes in the clear.
    pub anonymizer: Option<&'a Anonymizer>,
    pub providers: &'a ProviderMap,
    pub signatures: &'a SignatureSet,
    /// Manufacturer filter for EUI-64 product sources; empty admits all.
    pub product_ouis: &'a BTreeSet<Oui>,
}

impl IngestContext<'_> {
    pub fn source(&self, flow: &FlowRecord) -> AnonymizedAddress {
        match self.anonymizer {
            Some(a) => a.anonymize(flow.src),
            None => AnonymizedAddress::clear(flow.src),
        }
    }
}

/// Per-source first contact time of each signature element of one product.
pub type ProductContacts = HashMap<SourceAddr, BTreeMap<u16, u64>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowAggregator {
    pub profiles: ProfileStore,
    /// Sources seen on TCP/8883.
    pub mqtt_sources: HashSet<SourceKey>,
    /// EUI-64 sources per (manufacturer, destination port).
    pub port_sources: HashMap<(Oui, u16), HashSet<SourceKey>>,
    /// One entry per product of the signature set.
    pub products: Vec<ProductContacts>,
    pub min_timestamp: Option<u64>,
    pub max_timestamp: Option<u64>,
    pub counts: IngestCounts,
}

impl FlowAggregator {
    pub fn new(products: usize) -> Self {
        FlowAggregator { products: vec![HashMap::new(); products], ..Default::default() }
    }

    pub fn add(&mut self, flow: &FlowRecord, ctx: &IngestContext<'_>) {
        let src = ctx.source(flow);
        let provider = ctx.providers.lookup(flow.dst);
        self.profiles.accumulate(src, flow.timestamp, provider);

        self.min_timestamp = Some(self.min_timestamp.map_or(flow.timestamp, |t| t.min(flow.timestamp)));
        self.max_timestamp = Some(self.max_timestamp.map_or(flow.timestamp, |t| t.max(flow.timestamp)));

        let addr = SourceAddr::from(src);
        let oui = src.iid.oui();
        if flow.protocol == PROTO_TCP && flow.dst_port == MQTT_TLS_PORT {
            self.mqtt_sources.insert(addr.key());
        }
        if let Some(o) = oui {
            self.port_sources.entry((o, flow.dst_port)).or_default().insert(addr.key());
        }

        let eligible = match oui {
            Some(o) => ctx.product_ouis.is_empty() || ctx.product_ouis.contains(&o),
            None => true,
        };
        if eligible {
            for (product, contacts) in ctx.signatures.products.iter().zip(self.products.iter_mut()) {
                for (idx, el) in product.elements.iter().enumerate() {
                    if el.matches(flow.dst, provider, flow.dst_port) {
                        let t = contacts.entry(addr).or_default().entry(idx as u16).or_insert(flow.timestamp);
                        *t = (*t).min(flow.timestamp);
                    }
                }
            }
        }
    }

    /// Parses and ingests one CSV line, updating the ingest counters.
    pub fn add_line(&mut self, line: &str, lineno: usize, ctx: &IngestContext<'_>) {
        let outcome = parse_flow(line, lineno);
        self.counts.record(&outcome);
        if let Ok(Parsed::Flow(f)) = outcome {
            self.add(&f, ctx);
        }
    }

    pub fn merge(&mut self, other: FlowAggregator) {
        self.profiles.merge(other.profiles);
        self.mqtt_sources.extend(other.mqtt_sources);
        for (k, v) in other.port_sources {
            self.port_sources.entry(k).or_default().extend(v);
        }
        if self.products.len() < other.products.len() {
            self.products.resize(other.products.len(), HashMap::new());
        }
        for (mine, theirs) in self.products.iter_mut().zip(other.products) {
            for (addr, elems) in theirs {
                let slot = mine.entry(addr).or_default();
                for (e, t) in elems {
                    let cur = slot.entry(e).or_insert(t);
                    *cur = (*cur).min(t);
                }
            }
        }
        self.min_timestamp = match (self.min_timestamp, other.min_timestamp) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max_timestamp = match (self.max_timestamp, other.max_timestamp) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.counts.merge(&other.counts);
    }

    /// Folds a slice of flows, for in-memory inputs.
    pub fn from_flows<'f>(flows: impl IntoIterator<Item = &'f FlowRecord>, ctx: &IngestContext<'_>) -> Self {
        let mut agg = FlowAggregator::new(ctx.signatures.products.len());
        for f in flows {
            agg.counts.lines += 1;
            agg.counts.flows += 1;
            agg.add(f, ctx);
        }
        agg
    }
}
