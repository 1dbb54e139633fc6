//! Synthetic ISP: households behind rotating /56 delegations, CPE WAN
//! periphery pools and a destination catalog, emitted as flow records with
//! ground truth.

pub mod config;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::addr::{Address128, Iid64, Mac48, Oui, Prefix};
use crate::flows::{FlowRecord, CSV_HEADER, PROTO_TCP, PROTO_UDP};

pub use config::{Resolved, SimConfig, HOUR};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// U/L bit of octet 0, in IID position.
const UL_BIT: u64 = 0x02 << 56;
/// Odd multiplier of the affine index scrambler for end-user prefixes.
const PREFIX_MULTIPLIER: u64 = 0x9e37_79b9_7f4a_7c15;
const PREFIX_OFFSET: u64 = 0x5851_f42d;

/// 63 uniform bits with the U/L bit cleared. With `exclude_fffe` the draw
/// is repeated until it does not carry the EUI-64 marker.
pub fn random_privacy_iid<R: Rng + ?Sized>(rng: &mut R, exclude_fffe: bool) -> Iid64 {
    loop {
        let iid = Iid64(rng.next_u64() & !UL_BIT);
        if !(exclude_fffe && iid.is_eui64()) {
            return iid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceMode {
    Eui64,
    Privacy,
    Cpe,
}

impl DeviceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceMode::Eui64 => "eui64",
            DeviceMode::Privacy => "privacy",
            DeviceMode::Cpe => "cpe",
        }
    }

    fn class(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Device {
    pub id: u32,
    pub mode: DeviceMode,
    pub mac: Mac48,
    /// Index into the resolved pools; `None` for the CPE.
    pub pool: Option<usize>,
    pub subnet_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Household {
    pub id: u32,
    /// Home devices followed by the CPE, if it emits traffic.
    pub devices: Vec<Device>,
    /// Delegated /56 per epoch.
    pub prefixes: Vec<Prefix>,
    pub periphery: Option<Prefix>,
}

impl Household {
    pub fn has_eui64(&self) -> bool {
        self.devices.iter().any(|d| d.mode == DeviceMode::Eui64)
    }

    pub fn has_privacy(&self) -> bool {
        self.devices.iter().any(|d| d.mode == DeviceMode::Privacy)
    }
}

/// One address a device holds during part of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub household: u32,
    pub epoch: u32,
    pub prefix: Prefix,
    pub device: u32,
    pub iid: Iid64,
    pub subnet_id: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub households: Vec<Household>,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimFlow {
    pub household: u32,
    pub device: u32,
    pub record: FlowRecord,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub resolved: Resolved,
    /// Ordered by (timestamp, household); ties keep generation order.
    pub flows: Vec<SimFlow>,
    pub truth: GroundTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn in_range<R: Rng>(rng: &mut R, [lo, hi]: [u32; 2]) -> u32 {
    rng.random_range(lo..=hi)
}

fn pick_pool<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("pools are non-empty");
    let x = rng.random::<f64>() * total;
    cumulative.iter().position(|&c| x < c).unwrap_or(cumulative.len() - 1)
}

fn random_mac<R: Rng>(rng: &mut R, ouis: &[Oui]) -> Mac48 {
    let oui = ouis[rng.random_range(0..ouis.len())];
    Mac48::from_u64(u64::from(oui.to_u32()) << 24 | u64::from(rng.next_u32() & 0xff_ffff))
}

fn end_user_prefix(r: &Resolved, household: u32, epoch: u32) -> Prefix {
    let bits = 56 - u32::from(r.end_user_space.len());
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let idx = u64::from(household) * u64::from(r.epochs) + u64::from(epoch);
    let scrambled = idx.wrapping_mul(PREFIX_MULTIPLIER).wrapping_add(PREFIX_OFFSET) & mask;
    Prefix::new(r.end_user_space.bits() | u128::from(scrambled) << 72, 56).expect("aligned")
}

fn periphery_prefix(r: &Resolved, household: u32) -> Prefix {
    let idx = household % r.config.periphery.prefixes;
    Prefix::new(r.periphery_space.bits() | u128::from(idx) << 72, 56).expect("aligned")
}

/// Devices and MACs of one household, before global MAC deduplication.
fn draw_household(r: &Resolved, cumulative: &[f64], h: u32) -> Household {
    let c = &r.config;
    let mut rng = stream(c.seed, 2 * u64::from(h));
    let (n_eui, n_priv) = if rng.random_bool(c.p_eui64_household) {
        let e = in_range(&mut rng, c.eui64_devices);
        let p = if rng.random_bool(c.p_privacy_with_eui64) { in_range(&mut rng, c.privacy_devices) } else { 0 };
        (e, p)
    } else {
        (0, in_range(&mut rng, c.privacy_devices))
    };
    let mut devices = Vec::with_capacity((n_eui + n_priv + 1) as usize);
    for i in 0..n_eui + n_priv {
        let mode = if i < n_eui { DeviceMode::Eui64 } else { DeviceMode::Privacy };
        let pool = pick_pool(&mut rng, cumulative);
        let mac = random_mac(&mut rng, &r.pools[pool].ouis);
        let subnet_id = rng.random_range(0..c.subnets_per_household) as u8;
        devices.push(Device { id: i, mode, mac, pool: Some(pool), subnet_id });
    }
    let mut periphery = None;
    if c.periphery.prefixes > 0 && rng.random_bool(c.periphery.cpe_active_probability) {
        let mac = random_mac(&mut rng, &r.cpe_ouis);
        devices.push(Device { id: devices.len() as u32, mode: DeviceMode::Cpe, mac, pool: None, subnet_id: 0 });
        periphery = Some(periphery_prefix(r, h));
    }
    let prefixes = (0..r.epochs).map(|e| end_user_prefix(r, h, e)).collect();
    Household { id: h, devices, prefixes, periphery }
}

/// Makes every MAC unique in household order, then applies the duplicate
/// injection knob.
fn dedup_macs(r: &Resolved, households: &mut [Household]) {
    let mut rng = stream(r.config.seed, u64::MAX);
    let mut seen: HashSet<Mac48> = HashSet::new();
    for hh in households.iter_mut() {
        for d in &mut hh.devices {
            while !seen.insert(d.mac) {
                d.mac = random_mac(&mut rng, &[d.mac.oui()]);
            }
        }
    }
    if r.config.inject_duplicate_macs {
        let mut eui = households.iter_mut().filter_map(|h| h.devices.iter_mut().find(|d| d.mode == DeviceMode::Eui64));
        if let (Some(first), Some(second)) = (eui.next(), eui.next()) {
            second.mac = first.mac;
        }
    }
}

struct Emitter<'a> {
    r: &'a Resolved,
    rng: ChaCha8Rng,
    out: Vec<SimFlow>,
}

impl Emitter<'_> {
    fn emit(&mut self, household: u32, device: u32, src: Address128, ts: u64, dst: Address128, port: u16) {
        let packets = self.rng.random_range(1..=20u64);
        let bytes = packets * self.rng.random_range(40..=1500u64);
        let protocol = if matches!(port, 53 | 123) { PROTO_UDP } else { PROTO_TCP };
        let record = FlowRecord {
            timestamp: ts,
            src,
            dst,
            protocol,
            src_port: self.rng.random_range(32768..=60999),
            dst_port: port,
            bytes,
            packets,
            sampling_rate: self.r.config.sampling_rate,
        };
        self.out.push(SimFlow { household, device, record });
    }

    fn provider_destination(&mut self, p: usize) -> (Address128, u16) {
        let prov = &self.r.providers[p];
        let host_bits = 128 - u32::from(prov.prefix.len());
        let host = if host_bits == 0 {
            0
        } else {
            (u128::from(self.rng.next_u64()) << 64 | u128::from(self.rng.next_u64())) >> (128 - host_bits)
        };
        let port = prov.ports[self.rng.random_range(0..prov.ports.len())];
        (Address128(prov.prefix.bits() | host), port)
    }
}

/// Flows and address assignments of one household.
fn household_traffic(r: &Resolved, hh: &Household) -> (Vec<SimFlow>, Vec<Assignment>) {
    let c = &r.config;
    let mut rng = stream(c.seed, 2 * u64::from(hh.id) + 1);
    let adopted: Vec<bool> = r.providers.iter().map(|p| rng.random_bool(p.adoption)).collect();

    // privacy IIDs indexed [device][epoch * slots + slot]
    let slots = r.privacy_slots as usize;
    let privacy: Vec<Vec<Iid64>> = hh
        .devices
        .iter()
        .map(|d| match d.mode {
            DeviceMode::Privacy => (0..r.epochs as usize * slots)
                .map(|_| random_privacy_iid(&mut rng, c.exclude_fffe_collisions))
                .collect(),
            _ => Vec::new(),
        })
        .collect();

    let mut assignments = Vec::new();
    for e in 0..r.epochs {
        for d in &hh.devices {
            let prefix = if d.mode == DeviceMode::Cpe { hh.periphery.expect("cpe has a periphery prefix") } else { hh.prefixes[e as usize] };
            let iids: &[Iid64] = match d.mode {
                DeviceMode::Privacy => &privacy[d.id as usize][e as usize * slots..(e as usize + 1) * slots],
                _ => &[],
            };
            let eui = [d.mac.to_eui64()];
            for &iid in if iids.is_empty() { &eui[..] } else { iids } {
                assignments.push(Assignment { household: hh.id, epoch: e, prefix, device: d.id, iid, subnet_id: d.subnet_id });
            }
        }
    }

    let source = |d: &Device, ts: u64| -> Address128 {
        let offset = ts - c.start;
        let epoch = (offset / c.rotation_period) as usize;
        let (prefix, iid) = match d.mode {
            DeviceMode::Eui64 => (hh.prefixes[epoch], d.mac.to_eui64()),
            DeviceMode::Cpe => (hh.periphery.expect("cpe has a periphery prefix"), d.mac.to_eui64()),
            DeviceMode::Privacy => {
                let in_epoch = offset % c.rotation_period;
                let slot = in_epoch.checked_div(c.privacy_regen_interval).unwrap_or(0) as usize;
                (hh.prefixes[epoch], privacy[d.id as usize][epoch * slots + slot.min(slots - 1)])
            }
        };
        Address128(prefix.bits() | u128::from(d.subnet_id) << 64 | u128::from(iid.0))
    };

    let mut em = Emitter { r, rng, out: Vec::new() };
    let hours_per_epoch = (c.rotation_period / HOUR) as u32;
    for d in &hh.devices {
        let class = d.mode.class();
        for e in 0..r.epochs {
            let before = em.out.len();
            let first_hour = e * hours_per_epoch;
            let last_hour = (first_hour + hours_per_epoch).min(r.hours);
            for hour in first_hour..last_hour {
                let base = c.start + u64::from(hour) * HOUR;
                for (p, prov) in r.providers.iter().enumerate() {
                    let allowed = d.pool.is_none_or(|pool| prov.allowed[pool]);
                    if adopted[p] && allowed && prov.contact[class] > 0.0 && em.rng.random_bool(prov.contact[class]) {
                        let ts = base + em.rng.random_range(0..HOUR);
                        let (dst, port) = em.provider_destination(p);
                        em.emit(hh.id, d.id, source(d, ts), ts, dst, port);
                    }
                }
                if c.background_probability > 0.0 && em.rng.random_bool(c.background_probability) {
                    let ts = base + em.rng.random_range(0..HOUR);
                    em.emit(hh.id, d.id, source(d, ts), ts, r.fallback, c.fallback_port);
                }
            }
            if em.out.len() == before && last_hour > first_hour {
                let span = u64::from(last_hour - first_hour) * HOUR;
                let ts = c.start + u64::from(first_hour) * HOUR + em.rng.random_range(0..span);
                em.emit(hh.id, d.id, source(d, ts), ts, r.fallback, c.fallback_port);
            }
        }
    }
    (em.out, assignments)
}

impl Simulation {
    /// Runs the simulator. Output depends only on the configuration.
    pub fn generate(config: &SimConfig) -> Result<Simulation, SimError> {
        let r = config.validate()?;
        let mut acc = 0.0;
        let cumulative: Vec<f64> = r
            .pools
            .iter()
            .map(|p| {
                acc += p.weight;
                acc
            })
            .collect();

        let mut households: Vec<Household> =
            (0..config.households).into_par_iter().map(|h| draw_household(&r, &cumulative, h)).collect();
        dedup_macs(&r, &mut households);

        let parts: Vec<(Vec<SimFlow>, Vec<Assignment>)> =
            households.par_iter().map(|hh| household_traffic(&r, hh)).collect();
        let mut flows = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
        let mut assignments = Vec::new();
        for (f, a) in parts {
            flows.extend(f);
            assignments.extend(a);
        }
        flows.par_sort_by_key(|f| (f.record.timestamp, f.household));

        Ok(Simulation { resolved: r, flows, truth: GroundTruth { households, assignments } })
    }

    pub fn records(&self) -> impl Iterator<Item = &FlowRecord> {
        self.flows.iter().map(|f| &f.record)
    }

    pub fn write_flows<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for f in &self.flows {
            writeln!(out, "{}", f.record)?;
        }
        out.flush()
    }

    pub fn households_csv(&self) -> String {
        let mut s = String::from("household_id,device_id,mode,mac,oui,categories,iot_category,pool\n");
        for hh in &self.truth.households {
            for d in &hh.devices {
                let (cats, iot, pool) = match d.pool {
                    Some(p) => {
                        let pool = &self.resolved.pools[p];
                        (pool.entry.categories.to_string(), pool.entry.iot.map_or("", |c| c.as_str()), pool.name.as_str())
                    }
                    None => ("CPE".to_string(), "", ""),
                };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    hh.id,
                    d.id,
                    d.mode.as_str(),
                    d.mac,
                    d.mac.oui().to_hex(),
                    cats,
                    iot,
                    pool
                );
            }
        }
        s
    }

    pub fn assignments_csv(&self) -> String {
        let mut s = String::from("household_id,epoch,prefix,device_id,iid,subnet_id\n");
        for a in &self.truth.assignments {
            let _ = writeln!(s, "{},{},{},{},{},{}", a.household, a.epoch, a.prefix, a.device, a.iid, a.subnet_id);
        }
        s
    }

    /// Auxiliary analyzer inputs derived from the configuration, by file name.
    pub fn catalog_files(&self) -> Vec<(&'static str, String)> {
        let r = &self.resolved;
        vec![
            ("oui_db.csv", r.oui_db.to_csv()),
            ("taxonomy.csv", r.taxonomy.to_text()),
            ("providers.csv", r.provider_map.to_text()),
            ("signatures.csv", r.signatures_text()),
        ]
    }
}
