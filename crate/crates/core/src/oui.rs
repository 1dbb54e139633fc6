//! IEEE OUI registry and manufacturer category taxonomy.
//!
//! Registry lines are `HEXOUI,OrganizationName,OrganizationAddress`; fields may
//! be double-quoted when they contain commas. The published IEEE `oui.csv`
//! (`Registry,Assignment,Organization Name,Organization Address`) converts by
//! dropping the first column of every `MA-L` row.
//!
//! Taxonomy lines are `HEXOUI,cat1|cat2|...,iot_subcategory?`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use thiserror::Error;

use crate::addr::{Mac48, Oui};

#[derive(Debug, Error)]
pub enum OuiError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("taxonomy line {line}: {reason}")]
    Taxonomy { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuiRecord {
    pub oui: Oui,
    pub organization_name: String,
    pub organization_address: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub records: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OuiDatabase {
    records: BTreeMap<Oui, OuiRecord>,
}

impl OuiDatabase {
    /// Reads a registry stream. Malformed lines are skipped and counted;
    /// duplicate OUIs keep the last record.
    pub fn load<R: Read>(source: R) -> Result<(Self, LoadStats), OuiError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(source);
        let mut db = OuiDatabase::default();
        let mut stats = LoadStats::default();
        for row in reader.records() {
            let row = match row {
                Ok(r) => r,
                Err(e) => match e.into_kind() {
                    csv::ErrorKind::Io(io) => return Err(OuiError::Io(io)),
                    _ => {
                        stats.skipped += 1;
                        continue;
                    }
                },
            };
            if row.len() != 3 {
                stats.skipped += 1;
                continue;
            }
            let Ok(oui) = Oui::from_hex(&row[0]) else {
                stats.skipped += 1;
                continue;
            };
            let name = row[1].trim();
            if name.is_empty() {
                stats.skipped += 1;
                continue;
            }
            let record = OuiRecord {
                oui,
                organization_name: name.to_string(),
                organization_address: row[2].trim().to_string(),
            };
            if db.records.insert(oui, record).is_some() {
                stats.duplicates += 1;
            }
        }
        stats.records = db.records.len();
        Ok((db, stats))
    }

    pub fn insert(&mut self, record: OuiRecord) -> Option<OuiRecord> {
        self.records.insert(record.oui, record)
    }

    pub fn lookup(&self, mac: Mac48) -> Option<&OuiRecord> {
        self.get(mac.oui())
    }

    pub fn get(&self, oui: Oui) -> Option<&OuiRecord> {
        self.records.get(&oui)
    }

    pub fn organization(&self, oui: Oui) -> Option<&str> {
        self.get(oui).map(|r| r.organization_name.as_str())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OuiRecord> {
        self.records.values()
    }

    /// Writes the registry back out in the ingest format.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in self.records.values() {
            w.write_record([r.oui.to_hex().as_str(), &r.organization_name, &r.organization_address])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
    }
}

macro_rules! token_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $(stringify!($variant) => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }
    };
}

token_enum!(
    /// Business type of a manufacturer.
    DeviceCategory {
        IoT,
        Computers,
        Mobile,
        CPE,
        PartsManufacturer,
        NetworkEquipment,
        GamingConsole,
        Unknown,
        VirtualMachine,
    }
);

token_enum!(
    /// Product family of a manufacturer that only builds IoT devices.
    IoTCategory {
        Entertainment,
        NetworkAttachedStorage,
        RaspberryPi,
        SmartHome,
        Varied,
        PartsManufacturer,
        HomeAppliance,
        Surveillance,
        PointOfSale,
    }
);

/// A non-empty combination of device categories, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategorySet(u16);

impl CategorySet {
    pub const UNKNOWN: CategorySet = CategorySet(1 << DeviceCategory::Unknown as u16);

    pub fn single(c: DeviceCategory) -> Self {
        CategorySet(1 << c as u16)
    }

    pub fn from_categories(cats: impl IntoIterator<Item = DeviceCategory>) -> Option<Self> {
        let bits = cats.into_iter().fold(0u16, |acc, c| acc | 1 << c as u16);
        (bits != 0).then_some(CategorySet(bits))
    }

    pub fn contains(self, c: DeviceCategory) -> bool {
        self.0 & (1 << c as u16) != 0
    }

    pub fn is_exactly(self, c: DeviceCategory) -> bool {
        self == CategorySet::single(c)
    }

    pub fn iter(self) -> impl Iterator<Item = DeviceCategory> {
        DeviceCategory::ALL.iter().copied().filter(move |c| self.contains(*c))
    }
}

impl fmt::Display for CategorySet {
    /// `|`-joined tokens in declaration order, e.g. `IoT|Computers`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.iter() {
            if !first {
                f.write_str("|")?;
            }
            f.write_str(c.as_str())?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for CategorySet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let cats = s
            .split('|')
            .map(|t| t.trim().parse::<DeviceCategory>())
            .collect::<Result<BTreeSet<_>, _>>()?;
        CategorySet::from_categories(cats).ok_or_else(|| "empty category list".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaxonomyEntry {
    pub categories: CategorySet,
    pub iot: Option<IoTCategory>,
}

impl TaxonomyEntry {
    pub const UNKNOWN: TaxonomyEntry = TaxonomyEntry { categories: CategorySet::UNKNOWN, iot: None };
}

/// Manufacturer classification keyed by OUI.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    entries: BTreeMap<Oui, TaxonomyEntry>,
}

impl Taxonomy {
    /// Parses a taxonomy stream. Unlike the registry loader, any malformed
    /// line is an error, as is an IoT subcategory on a manufacturer that is
    /// not exclusively IoT.
    pub fn load<R: Read>(source: R) -> Result<Self, OuiError> {
        let mut taxonomy = Taxonomy::default();
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |reason: String| OuiError::Taxonomy { line: lineno, reason };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!("expected 2 or 3 fields, found {}", fields.len())));
            }
            let oui = Oui::from_hex(fields[0]).map_err(|e| bad(e.to_string()))?;
            let categories: CategorySet = fields[1].parse().map_err(bad)?;
            let iot = match fields.get(2) {
                Some(t) if !t.is_empty() => Some(t.parse::<IoTCategory>().map_err(bad)?),
                _ => None,
            };
            taxonomy
                .insert(oui, TaxonomyEntry { categories, iot })
                .map_err(|reason| bad(reason.to_string()))?;
        }
        Ok(taxonomy)
    }

    pub fn insert(&mut self, oui: Oui, entry: TaxonomyEntry) -> Result<(), &'static str> {
        if entry.iot.is_some() && !entry.categories.is_exactly(DeviceCategory::IoT) {
            return Err("IoT subcategory given for a manufacturer that is not exclusively IoT");
        }
        self.entries.insert(oui, entry);
        Ok(())
    }

    /// Taxonomy entry for `oui`, or `({Unknown}, none)`.
    pub fn categorize(&self, oui: Oui) -> TaxonomyEntry {
        self.entries.get(&oui).copied().unwrap_or(TaxonomyEntry::UNKNOWN)
    }

    /// OUIs classified here but absent from the registry.
    pub fn unregistered(&self, db: &OuiDatabase) -> Vec<Oui> {
        self.entries.keys().copied().filter(|o| db.get(*o).is_none()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (oui, e) in &self.entries {
            let iot = e.iot.map(|c| c.as_str()).unwrap_or("");
            out.push_str(&format!("{},{},{}\n", oui.to_hex(), e.categories, iot));
        }
        out
    }
}
