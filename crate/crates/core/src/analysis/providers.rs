//! Destination-prefix to provider attribution by longest-prefix match.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read};

use crate::addr::{Address128, Prefix};
use crate::tracker::ProviderId;

use super::AnalysisError;

#[derive(Debug, Clone, Default)]
pub struct ProviderMap {
    names: Vec<String>,
    ids: HashMap<String, ProviderId>,
    rules: Vec<(Prefix, ProviderId)>,
    // prefix length -> network bits -> provider, probed longest first
    by_len: BTreeMap<u8, HashMap<u128, ProviderId>>,
}

impl ProviderMap {
    /// Reads `prefix/len,provider_id` lines. `#` starts a comment line.
    pub fn load<R: Read>(source: R) -> Result<Self, AnalysisError> {
        let mut map = ProviderMap::default();
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AnalysisError::Config { file: "provider map", line: idx + 1, reason };
            let (p, name) = t.split_once(',').ok_or_else(|| bad("expected `prefix/len,provider_id`".into()))?;
            let prefix: Prefix = p.trim().parse().map_err(|e: crate::addr::AddrError| bad(e.to_string()))?;
            let name = name.trim();
            if name.is_empty() || name.contains(',') {
                return Err(bad(format!("invalid provider id `{name}`")));
            }
            map.insert(prefix, name).map_err(bad)?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, prefix: Prefix, provider: &str) -> Result<ProviderId, String> {
        let id = self.intern(provider);
        let slot = self.by_len.entry(prefix.len()).or_default();
        if let Some(prev) = slot.insert(prefix.bits(), id) {
            if prev != id {
                return Err(format!("prefix {prefix} mapped to both `{}` and `{provider}`", self.names[prev as usize]));
            }
        } else {
            self.rules.push((prefix, id));
        }
        Ok(id)
    }

    fn intern(&mut self, name: &str) -> ProviderId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as ProviderId;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    /// Provider of the most specific rule covering `addr`.
    pub fn lookup(&self, addr: Address128) -> Option<ProviderId> {
        self.by_len
            .iter()
            .rev()
            .find_map(|(&len, nets)| nets.get(&Prefix::truncate(addr, len).bits()).copied())
    }

    pub fn id(&self, name: &str) -> Option<ProviderId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: ProviderId) -> &str {
        &self.names[id as usize]
    }

    /// Provider names in id order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rules(&self) -> &[(Prefix, ProviderId)] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.rules.iter().map(|(p, id)| format!("{p},{}\n", self.name(*id))).collect()
    }
}
