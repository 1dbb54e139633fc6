//! Result families computed from the accumulated flow stream.

pub mod aggregate;
pub mod hamming;
pub mod providers;
pub mod signatures;
pub mod tables;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::PrefixToken;
use crate::oui::{IoTCategory, OuiDatabase, Taxonomy};
use crate::tracker::{detect_periphery, link_rotations, PeripheryParams, TrackingTable};

pub use aggregate::{FlowAggregator, IngestContext, SourceAddr, SourceKey};
pub use hamming::{hamming_fit, FitOutcome, HammingFit};
pub use providers::ProviderMap;
pub use signatures::SignatureSet;
pub use tables::*;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file} line {line}: {reason}")]
    Config { file: &'static str, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub top_ouis: usize,
    pub heatmap_ouis: usize,
    pub heatmap_ports: usize,
    pub periphery: PeripheryParams,
    pub bucket_seconds: u64,
    pub hamming_min_samples: u64,
    pub hamming_p_threshold: f64,
    pub min_hits: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            top_ouis: 50,
            heatmap_ouis: 50,
            heatmap_ports: 20,
            periphery: PeripheryParams::default(),
            bucket_seconds: 3600,
            hamming_min_samples: hamming::DEFAULT_MIN_SAMPLES,
            hamming_p_threshold: hamming::DEFAULT_P_THRESHOLD,
            min_hits: 1,
        }
    }
}

/// Every table of one run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub periphery: BTreeSet<PrefixToken>,
    pub tracking: TrackingTable,
    /// (scope, level, counts); scope is `all` or `end_user`.
    pub venn: Vec<(&'static str, VennLevel, VennCounts)>,
    pub oui_popularity: Vec<OuiPopularityRow>,
    pub category_shares: WeightedShares<crate::oui::CategorySet>,
    pub iot_composition: WeightedShares<Option<IoTCategory>>,
    pub collateral: Collateral,
    pub hamming: HammingFit,
    pub ports: PortHeatmap,
    pub mqtt: Option<MqttShare>,
    pub window: Option<Window>,
    /// One series per product of the signature set.
    pub timeseries: Vec<(String, Vec<SeriesPoint>)>,
    pub provider_names: Vec<String>,
    pub end_user_prefixes: u64,
    pub end_user_at_risk: u64,
    pub flows: u64,
}

impl Analysis {
    pub fn run(
        agg: &FlowAggregator,
        db: &OuiDatabase,
        taxonomy: &Taxonomy,
        providers: &ProviderMap,
        signatures: &SignatureSet,
        opts: &AnalysisOptions,
    ) -> Self {
        let all = agg.profiles.sorted();
        let periphery = detect_periphery(all.iter().copied(), taxonomy, &opts.periphery);
        let end_user = tables::end_user(&all, &periphery);
        let tracking = link_rotations(end_user.iter().copied());

        let mut venn = Vec::new();
        for (scope, set) in [("all", &all), ("end_user", &end_user)] {
            for level in VennLevel::ALL {
                venn.push((scope, level, venn_counts(set.iter().copied(), &tracking, level)));
            }
        }

        let eui_end_user: Vec<_> = end_user.iter().copied().filter(|p| p.has_eui64()).collect();
        let window = match (agg.min_timestamp, agg.max_timestamp) {
            (Some(a), Some(b)) => Some(Window::covering(a, b, opts.bucket_seconds.max(1))),
            _ => None,
        };
        let timeseries = match &window {
            Some(w) => signatures
                .products
                .iter()
                .zip(&agg.products)
                .map(|(p, c)| (p.product_id.clone(), product_timeseries(c, opts.min_hits, w)))
                .collect(),
            None => Vec::new(),
        };

        let mut non_eui: BTreeSet<crate::addr::Iid64> = BTreeSet::new();
        for p in &all {
            non_eui.extend(p.other_iids.keys().copied());
        }

        Analysis {
            venn,
            oui_popularity: oui_popularity(all.iter().copied(), db),
            category_shares: category_shares(eui_end_user.iter().copied(), taxonomy),
            iot_composition: iot_composition(eui_end_user.iter().copied(), taxonomy),
            collateral: collateral_leakage(end_user.iter().copied(), providers.names().len(), window.as_ref()),
            hamming: hamming_fit(non_eui, opts.hamming_min_samples),
            ports: port_heatmap(&agg.port_sources, opts.heatmap_ouis, opts.heatmap_ports),
            mqtt: mqtt_proxy(&agg.mqtt_sources),
            timeseries,
            window,
            provider_names: providers.names().to_vec(),
            end_user_prefixes: end_user.len() as u64,
            end_user_at_risk: eui_end_user.len() as u64,
            flows: agg.counts.flows,
            periphery,
            tracking,
        }
    }

    pub fn at_risk_fraction(&self) -> Option<f64> {
        (self.end_user_prefixes > 0).then(|| self.end_user_at_risk as f64 / self.end_user_prefixes as f64)
    }

    pub fn venn(&self, scope: &str, level: VennLevel) -> VennCounts {
        self.venn
            .iter()
            .find(|(s, l, _)| *s == scope && *l == level)
            .map(|(_, _, v)| *v)
            .unwrap_or_default()
    }

    /// Renders every table; keys are file names.
    pub fn render(&self, db: &OuiDatabase, opts: &AnalysisOptions) -> BTreeMap<&'static str, String> {
        let mut files = BTreeMap::new();

        let mut s = String::from("scope,level,eui64_only,both,non_eui64_only\n");
        for (scope, level, v) in &self.venn {
            let _ = writeln!(s, "{scope},{},{},{},{}", level.as_str(), v.eui64_only, v.both, v.non_eui64_only);
        }
        files.insert("venn.csv", s);

        let mut s = String::from("rank,oui,organization,distinct_iids,distinct_64s,distinct_56s\n");
        for (i, r) in self.oui_popularity.iter().take(opts.top_ouis).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                i + 1,
                r.oui.to_hex(),
                csv_field(r.organization.as_deref().unwrap_or("")),
                r.distinct_iids,
                r.distinct_64s,
                r.distinct_56s
            );
        }
        files.insert("oui_popularity.csv", s);

        let mut s = String::from("categories,weighted_prefixes,share\n");
        for (k, w, sh) in self.category_shares.rows() {
            let _ = writeln!(s, "{k},{w:.6},{sh:.6}");
        }
        files.insert("category_shares.csv", s);

        let mut s = String::from("iot_category,weighted_prefixes,share\n");
        for (k, w, sh) in self.iot_composition.rows() {
            let name = k.map_or("Unspecified", |c| c.as_str());
            let _ = writeln!(s, "{name},{w:.6},{sh:.6}");
        }
        files.insert("iot_composition.csv", s);

        let c = &self.collateral;
        let mut s = String::from("provider_id,prefixes,fraction_of_end_user\n");
        let frac = |n: u64| if c.end_user_prefixes == 0 { 0.0 } else { n as f64 / c.end_user_prefixes as f64 };
        for (i, name) in self.provider_names.iter().enumerate() {
            let _ = writeln!(s, "{},{},{:.6}", name, c.per_provider[i], frac(c.per_provider[i]));
        }
        let _ = writeln!(s, "*any*,{},{:.6}", c.union, frac(c.union));
        files.insert("collateral.csv", s);

        let mut s = String::from("provider_id,bucket_start,cumulative_prefixes\n");
        if let Some(w) = &self.window {
            for (i, series) in c.series.iter().enumerate() {
                let name = self.provider_names.get(i).map_or("*any*", String::as_str);
                for (b, v) in series.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{}", name, w.bucket_start(b), v);
                }
            }
        }
        files.insert("collateral_timeseries.csv", s);

        let mut s = String::from("weight,count,expected\n");
        let pmf = hamming::reference_pmf();
        for (w, n) in self.hamming.histogram.iter().enumerate() {
            let _ = writeln!(s, "{w},{n},{:.6}", pmf[w] * self.hamming.samples as f64);
        }
        files.insert("hamming.csv", s);

        let mut s = String::from("oui,organization");
        for p in &self.ports.ports {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for (o, row) in self.ports.ouis.iter().zip(&self.ports.counts) {
            let _ = write!(s, "{},{}", o.to_hex(), csv_field(db.organization(*o).unwrap_or("")));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        files.insert("ports.csv", s);

        let mut s = String::from("product_id,bucket_start,eui64_addresses,eui64_iids,non_eui64_addresses,non_eui64_iids\n");
        for (product, points) in &self.timeseries {
            for p in points {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    csv_field(product),
                    p.bucket_start,
                    p.eui64_addresses,
                    p.eui64_iids,
                    p.non_eui64_addresses,
                    p.non_eui64_iids
                );
            }
        }
        files.insert("timeseries.csv", s);

        files.insert("tracking.csv", self.tracking.to_csv());
        files.insert("summary.csv", self.summary());
        files
    }

    fn summary(&self) -> String {
        let mut rows: Vec<(&str, String)> = vec![
            ("flows", self.flows.to_string()),
            ("prefixes", (self.end_user_prefixes + self.periphery.len() as u64).to_string()),
            ("periphery_prefixes", self.periphery.len().to_string()),
            ("end_user_prefixes", self.end_user_prefixes.to_string()),
            ("end_user_eui64_prefixes", self.end_user_at_risk.to_string()),
            ("end_user_at_risk_fraction", opt(self.at_risk_fraction())),
            ("tracked_components", self.tracking.tracked().count().to_string()),
            ("rotating_component_fraction", opt(self.tracking.rotation_fraction())),
            ("distinct_ouis", self.oui_popularity.len().to_string()),
            ("distinct_manufacturers", distinct_manufacturers(&self.oui_popularity).to_string()),
            ("dual_type_end_user_prefixes", self.collateral.dual_type_prefixes.to_string()),
            ("collateral_any_provider", self.collateral.union.to_string()),
            ("collateral_any_provider_fraction", opt(self.collateral.union_fraction())),
            ("mqtt_sources", self.mqtt.map_or("0".into(), |m| m.sources.to_string())),
            ("mqtt_eui64_sources", self.mqtt.map_or("0".into(), |m| m.eui64_sources.to_string())),
            ("mqtt_eui64_fraction", opt(self.mqtt.map(|m| m.fraction()))),
            ("hamming_samples", self.hamming.samples.to_string()),
            ("hamming_mean", opt(self.hamming.mean)),
        ];
        match &self.hamming.outcome {
            FitOutcome::Fit { test, bins } => {
                rows.push(("hamming_status", "fit".into()));
                rows.push(("hamming_chi_square", format!("{:.6}", test.statistic)));
                rows.push(("hamming_degrees_of_freedom", test.degrees_of_freedom.to_string()));
                rows.push(("hamming_p_value", format!("{:.6e}", test.p_value)));
                rows.push(("hamming_bins", format!("{}-{}", bins.0, bins.1)));
            }
            FitOutcome::Insufficient { required, .. } => {
                rows.push(("hamming_status", format!("insufficient_data(required={required})")));
            }
        }
        let mut s = String::from("key,value\n");
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
