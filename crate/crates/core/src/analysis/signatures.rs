//! Destination signatures used to attribute sources to products.

use std::io::{BufRead, BufReader, Read};

use crate::addr::{Address128, Prefix};
use crate::tracker::ProviderId;

use super::providers::ProviderMap;
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Provider(ProviderId),
    Prefix(Prefix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignatureElement {
    pub target: Target,
    pub port: Option<u16>,
}

impl SignatureElement {
    pub fn matches(&self, dst: Address128, provider: Option<ProviderId>, dst_port: u16) -> bool {
        let hit = match self.target {
            Target::Provider(p) => provider == Some(p),
            Target::Prefix(pfx) => pfx.contains(dst),
        };
        hit && self.port.is_none_or(|p| p == dst_port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Product {
    pub product_id: String,
    pub elements: Vec<SignatureElement>,
}

/// Products keyed by their destination signatures. A source belongs to a
/// product once it has contacted `min_hits` distinct elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSet {
    pub products: Vec<Product>,
    pub min_hits: usize,
}

impl Default for SignatureSet {
    fn default() -> Self {
        SignatureSet { products: Vec::new(), min_hits: 1 }
    }
}

impl SignatureSet {
    /// Reads `product_id,provider_id_or_prefix,port?` lines. Provider names
    /// resolve against `providers`; anything containing `/` is a prefix.
    pub fn load<R: Read>(source: R, providers: &ProviderMap, min_hits: usize) -> Result<Self, AnalysisError> {
        let mut set = SignatureSet { products: Vec::new(), min_hits: min_hits.max(1) };
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AnalysisError::Config { file: "signature set", line: idx + 1, reason };
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) || fields[0].is_empty() {
                return Err(bad("expected `product_id,provider_id_or_prefix,port?`".into()));
            }
            let target = if fields[1].contains('/') {
                Target::Prefix(fields[1].parse().map_err(|e: crate::addr::AddrError| bad(e.to_string()))?)
            } else {
                Target::Provider(
                    providers.id(fields[1]).ok_or_else(|| bad(format!("unknown provider `{}`", fields[1])))?,
                )
            };
            let port = match fields.get(2) {
                Some(p) if !p.is_empty() => Some(p.parse::<u16>().map_err(|_| bad(format!("invalid port `{p}`")))?),
                _ => None,
            };
            set.push(fields[0], SignatureElement { target, port });
        }
        Ok(set)
    }

    pub fn push(&mut self, product_id: &str, element: SignatureElement) {
        match self.products.iter_mut().find(|p| p.product_id == product_id) {
            Some(p) => {
                if !p.elements.contains(&element) {
                    p.elements.push(element);
                }
            }
            None => self.products.push(Product { product_id: product_id.to_string(), elements: vec![element] }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}
