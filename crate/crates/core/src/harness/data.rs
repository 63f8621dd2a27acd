//! Synthetic vertically distributed patient data and its deployment as
//! services.
//!
//! DS1 holds `(ssn, disease, city)` for every subject, DS2 a second condition
//! for a subset, DS3 demographics for every subject. All three encrypt
//! identifiers under one shared key, as the mediator joins on ciphertexts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::Stores;
use crate::error::{Error, Result};
use crate::mediator::{ServiceHandle, Services};
use crate::opes::{keygen, OrderPreservingScheme};
use crate::service::{ConsentTable, Service, ServiceConfig, TcpServer, TcpTransport};
use crate::store::{read_events, write_events, Attrs, BucketPolicy, Event, TimestampedStore};

use super::TransportKind;

/// Plaintext identifier domain of generated subjects.
pub const DOMAIN_SIZE: u64 = 1 << 20;
/// Share of subjects who agreed to precise disclosure.
pub const CONSENT_FRACTION: f64 = 0.19;
/// Share of subjects DS2 knows about.
pub const DS2_FRACTION: f64 = 0.6;
/// Share of rows present when a service joins; the rest arrives in
/// `LATE_BATCHES` later batches.
pub const INITIAL_FRACTION: f64 = 0.8;
pub const LATE_BATCHES: u64 = 4;

const DISEASES: [&str; 6] = ["aids", "cancer", "diabetes", "hepatitis", "influenza", "tuberculosis"];
const CONDITIONS: [&str; 4] = ["anxiety", "bipolar", "depression", "schizophrenia"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub seed: u64,
    pub size: usize,
    pub cities: usize,
    pub ds1: Vec<Event>,
    pub ds2: Vec<Event>,
    pub ds3: Vec<Event>,
    /// Plaintext identifiers of consenting subjects, ascending.
    pub consent: Vec<u64>,
}

fn city(i: usize) -> String {
    format!("city-{i}")
}

/// Stamp rows: the first `INITIAL_FRACTION` of a shuffled order at ts 0, the
/// rest round-robin over the late batches. Returned in `(ts, id)` order.
fn stamp(rng: &mut ChaCha8Rng, rows: Vec<(u64, Attrs)>) -> Vec<Event> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let initial = (rows.len() as f64 * INITIAL_FRACTION).round() as usize;
    let mut ts = vec![0u64; rows.len()];
    for (rank, &i) in order.iter().enumerate().skip(initial) {
        ts[i] = 1 + (rank - initial) as u64 % LATE_BATCHES;
    }
    let mut events: Vec<Event> = rows
        .into_iter()
        .zip(ts)
        .map(|((plain_id, attrs), ts)| Event::Insert { plain_id, ts, attrs })
        .collect();
    events.sort_by_key(|e| (e.ts(), e.plain_id()));
    events
}

/// Deterministic dataset of `size` subjects over `cities` cities.
pub fn generate(seed: u64, size: usize, cities: usize) -> Result<Dataset> {
    if size == 0 || size as u64 > DOMAIN_SIZE || cities == 0 {
        return Err(Error::Invalid(format!(
            "cannot generate {size} subjects over {cities} cities"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (size as u64).rotate_left(32));
    let subjects: Vec<u64> = sample(&mut rng, DOMAIN_SIZE as usize, size)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    let ssn = |p: u64| ("ssn".to_string(), p.to_string());

    let ds1 = subjects
        .iter()
        .map(|&p| {
            let attrs = Attrs::from([
                ssn(p),
                ("disease".into(), DISEASES[rng.gen_range(0..DISEASES.len())].into()),
                ("city".into(), city(rng.gen_range(0..cities))),
            ]);
            (p, attrs)
        })
        .collect();
    let ds1 = stamp(&mut rng, ds1);

    let treated = (size as f64 * DS2_FRACTION).round() as usize;
    let ds2 = sample(&mut rng, size, treated)
        .into_iter()
        .map(|i| {
            let p = subjects[i];
            let cond = CONDITIONS[rng.gen_range(0..CONDITIONS.len())];
            (p, Attrs::from([ssn(p), ("condition".into(), cond.into())]))
        })
        .collect();
    let ds2 = stamp(&mut rng, ds2);

    let ds3 = subjects
        .iter()
        .map(|&p| {
            let dob = format!(
                "{}-{:02}-{:02}",
                rng.gen_range(1930..2006),
                rng.gen_range(1..13),
                rng.gen_range(1..29)
            );
            let sex = if rng.gen_bool(0.5) { "F" } else { "M" };
            (
                p,
                Attrs::from([ssn(p), ("dob".into(), dob), ("sex".into(), sex.into())]),
            )
        })
        .collect();
    let ds3 = stamp(&mut rng, ds3);

    let consenting = (size as f64 * CONSENT_FRACTION).round() as usize;
    let mut consent: Vec<u64> = sample(&mut rng, size, consenting)
        .into_iter()
        .map(|i| subjects[i])
        .collect();
    consent.sort_unstable();

    Ok(Dataset {
        seed,
        size,
        cities,
        ds1,
        ds2,
        ds3,
        consent,
    })
}

fn write_log(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events(&mut w, events)?;
    w.flush()?;
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<Event>> {
    read_events(BufReader::new(File::open(path)?))
}

/// Write `<out>/<size>/{ds1,ds2,ds3}.log`, `consent.txt` and `meta.txt` for
/// every size. Returns the per-size directories.
pub fn gen_data(seed: u64, sizes: &[usize], cities: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for &size in sizes {
        let d = generate(seed, size, cities)?;
        let dir = out.join(size.to_string());
        fs::create_dir_all(&dir)?;
        write_log(&dir.join("ds1.log"), &d.ds1)?;
        write_log(&dir.join("ds2.log"), &d.ds2)?;
        write_log(&dir.join("ds3.log"), &d.ds3)?;
        let mut c = BufWriter::new(File::create(dir.join("consent.txt"))?);
        for p in &d.consent {
            writeln!(c, "{p}")?;
        }
        c.flush()?;
        fs::write(
            dir.join("meta.txt"),
            format!("seed={seed}\nsize={size}\ncities={cities}\ndomain={DOMAIN_SIZE}\n"),
        )?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Read a directory written by [`gen_data`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.txt");
    let meta = fs::read_to_string(&meta_path)
        .map_err(|e| Error::Invalid(format!("{}: {e} (run gen-data first)", meta_path.display())))?;
    let meta: BTreeMap<&str, &str> = meta.lines().filter_map(|l| l.split_once('=')).collect();
    let field = |k: &str| -> Result<u64> {
        meta.get(k)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Invalid(format!("{}: missing or bad `{k}`", meta_path.display())))
    };
    if field("domain")? != DOMAIN_SIZE {
        return Err(Error::Invalid(format!("{}: unsupported domain", meta_path.display())));
    }
    let mut consent = Vec::new();
    for (n, line) in BufReader::new(File::open(dir.join("consent.txt"))?).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            consent.push(
                line.trim()
                    .parse()
                    .map_err(|_| Error::parse(n + 1, format!("bad identifier `{line}`")))?,
            );
        }
    }
    Ok(Dataset {
        seed: field("seed")?,
        size: field("size")? as usize,
        cities: field("cities")? as usize,
        ds1: read_log(&dir.join("ds1.log"))?,
        ds2: read_log(&dir.join("ds2.log"))?,
        ds3: read_log(&dir.join("ds3.log"))?,
        consent,
    })
}

/// Store snapshots from a data directory: every `<name>.log` becomes the
/// store of service `<NAME>`, keyed by the seed in `meta.txt`. Bucketing does
/// not affect recounts, so the default policy is used.
pub fn load_stores(dir: &Path) -> Result<Stores> {
    let data = load_dataset(dir)?;
    let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(data.seed, DOMAIN_SIZE)?);
    let mut stores = Stores::new();
    let mut logs: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    logs.retain(|p| p.extension().is_some_and(|x| x == "log"));
    logs.sort();
    for path in logs {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_uppercase();
        let store = TimestampedStore::from_events(key.clone(), &read_log(&path)?, BucketPolicy::default())?;
        stores.insert(name, store);
    }
    Ok(stores)
}

/// The three services of a dataset, reachable in process or over TCP.
pub struct Deployment {
    pub services: Services,
    pub key: Arc<dyn OrderPreservingScheme>,
    // kept alive for the TCP transports
    _servers: Vec<TcpServer>,
}

impl Deployment {
    pub fn new(data: &Dataset, bucket_size: usize, k: usize, transport: TransportKind) -> Result<Self> {
        let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(data.seed, DOMAIN_SIZE)?);
        let consent: ConsentTable = data.consent.iter().copied().collect();
        let mut services = Services::new();
        let mut servers = Vec::new();
        for (name, events) in [("DS1", &data.ds1), ("DS2", &data.ds2), ("DS3", &data.ds3)] {
            let store = TimestampedStore::from_events(key.clone(), events, BucketPolicy::FixedCount(bucket_size))?;
            let config = ServiceConfig {
                record_transcript: false,
                ..ServiceConfig::new(name, k)
            };
            let service = Arc::new(Service::new(config, store)?);
            service.set_consent(consent.clone());
            let handle = match transport {
                TransportKind::InProc => ServiceHandle::in_proc(service),
                TransportKind::Tcp => {
                    let server = TcpServer::spawn(service.clone(), "127.0.0.1:0")?;
                    let t = TcpTransport::connect(server.local_addr())?;
                    servers.push(server);
                    ServiceHandle {
                        service,
                        transport: Arc::new(t),
                    }
                }
            };
            services.insert(name.to_string(), handle);
        }
        Ok(Deployment {
            services,
            key,
            _servers: servers,
        })
    }

    /// Snapshots of every service's store, for the auditor.
    pub fn stores(&self) -> Stores {
        self.services
            .iter()
            .map(|(name, h)| (name.clone(), h.service.store().clone()))
            .collect()
    }
}
