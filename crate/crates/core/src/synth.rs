//! Deterministic synthetic system-call traces.
//!
//! Each simulated thread walks a per-process first-order chain over system
//! call names. The next call depends on the process, the current call and
//! whether it failed, so call- and process-related arguments carry signal
//! that the bare name sequence does not.

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Event;

/// Next-call distributions after a successful and a failed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branches {
    pub ok: IndexMap<String, f64>,
    pub fail: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub name: String,
    pub weight: f64,
    #[serde(default = "one")]
    pub threads: u32,
    /// First call issued by every thread.
    pub start: String,
    pub transitions: IndexMap<String, Branches>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub n_events: usize,
    pub hostname: String,
    pub n_cpus: u32,
    /// Probability that an exit carries a negative return value.
    pub failure_rate: f64,
    pub mean_inter_arrival_us: f64,
    /// Probability that the scheduler keeps the current thread for the next event.
    pub stickiness: f64,
    /// Calls whose exit is delayed by `slow_factor` mean inter-arrivals.
    pub slow_calls: Vec<String>,
    pub slow_factor: f64,
    #[serde(rename = "process")]
    pub processes: Vec<ProcessSpec>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 0,
            n_events: 100_000,
            hostname: "web1".into(),
            n_cpus: 2,
            failure_rate: 0.2,
            mean_inter_arrival_us: 5.0,
            stickiness: 0.75,
            slow_calls: ["futex", "poll", "epoll_wait", "select", "nanosleep", "accept4"]
                .map(String::from)
                .to_vec(),
            slow_factor: 4.0,
            processes: default_processes(),
        }
    }
}

type Row<'a> = (&'a str, &'a [(&'a str, f64)], &'a [(&'a str, f64)]);

fn process(name: &str, weight: f64, threads: u32, start: &str, rows: &[Row<'_>]) -> ProcessSpec {
    let dist = |pairs: &[(&str, f64)]| pairs.iter().map(|(s, p)| (s.to_string(), *p)).collect();
    ProcessSpec {
        name: name.into(),
        weight,
        threads,
        start: start.into(),
        transitions: rows
            .iter()
            .map(|(from, ok, fail)| {
                (
                    from.to_string(),
                    Branches {
                        ok: dist(ok),
                        fail: dist(fail),
                    },
                )
            })
            .collect(),
    }
}

/// Web-serving workload: a web server, its PHP workers and a database
/// handle requests while a browser and two monitors add background noise.
pub fn default_processes() -> Vec<ProcessSpec> {
    vec![
        process(
            "apache2",
            30.0,
            4,
            "poll",
            &[
                ("poll", &[("accept4", 0.5), ("read", 0.3), ("futex", 0.2)], &[("futex", 1.0)]),
                ("accept4", &[("read", 0.7), ("getsockname", 0.3)], &[("poll", 1.0)]),
                ("getsockname", &[("read", 1.0)], &[("close", 1.0)]),
                ("read", &[("stat", 0.4), ("futex", 0.6)], &[("poll", 1.0)]),
                ("stat", &[("open", 1.0)], &[("writev", 1.0)]),
                ("open", &[("fstat", 1.0)], &[("writev", 1.0)]),
                ("fstat", &[("mmap", 0.5), ("sendfile", 0.5)], &[("close", 1.0)]),
                ("mmap", &[("writev", 1.0)], &[("close", 1.0)]),
                ("sendfile", &[("close", 1.0)], &[("writev", 1.0)]),
                ("writev", &[("close", 0.7), ("munmap", 0.3)], &[("poll", 1.0)]),
                ("munmap", &[("close", 1.0)], &[("close", 1.0)]),
                ("close", &[("futex", 0.5), ("poll", 0.5)], &[("futex", 1.0)]),
                ("futex", &[("poll", 0.7), ("read", 0.3)], &[("futex", 1.0)]),
            ],
        ),
        process(
            "mysqld",
            22.0,
            3,
            "futex",
            &[
                ("futex", &[("recvfrom", 0.6), ("poll", 0.4)], &[("futex", 1.0)]),
                ("poll", &[("recvfrom", 1.0)], &[("futex", 1.0)]),
                ("recvfrom", &[("read", 0.5), ("lseek", 0.5)], &[("setsockopt", 1.0)]),
                ("setsockopt", &[("poll", 1.0)], &[("futex", 1.0)]),
                ("lseek", &[("read", 1.0)], &[("futex", 1.0)]),
                ("read", &[("sendto", 1.0)], &[("poll", 1.0)]),
                ("sendto", &[("futex", 1.0)], &[("poll", 1.0)]),
            ],
        ),
        process(
            "php-fpm",
            20.0,
            2,
            "epoll_wait",
            &[
                ("epoll_wait", &[("accept4", 0.7), ("futex", 0.3)], &[("epoll_wait", 1.0)]),
                ("accept4", &[("recvfrom", 0.7), ("fcntl", 0.3)], &[("epoll_wait", 1.0)]),
                ("fcntl", &[("recvfrom", 1.0)], &[("recvfrom", 1.0)]),
                ("recvfrom", &[("openat", 0.5), ("sendto", 0.5)], &[("poll", 1.0)]),
                ("openat", &[("fstat", 1.0)], &[("sendto", 1.0)]),
                ("fstat", &[("read", 1.0)], &[("close", 1.0)]),
                ("read", &[("close", 1.0)], &[("poll", 1.0)]),
                ("close", &[("sendto", 1.0)], &[("futex", 1.0)]),
                ("sendto", &[("poll", 0.6), ("futex", 0.4)], &[("shutdown", 1.0)]),
                ("shutdown", &[("epoll_wait", 1.0)], &[("epoll_wait", 1.0)]),
                ("poll", &[("recvfrom", 0.5), ("epoll_wait", 0.5)], &[("futex", 1.0)]),
                ("futex", &[("epoll_wait", 1.0)], &[("futex", 1.0)]),
            ],
        ),
        process(
            "firefox",
            13.0,
            3,
            "poll",
            &[
                ("poll", &[("recvfrom", 0.4), ("read", 0.3), ("futex", 0.3)], &[("futex", 1.0)]),
                ("recvfrom", &[("futex", 0.5), ("mmap", 0.5)], &[("poll", 1.0)]),
                ("read", &[("write", 0.5), ("futex", 0.5)], &[("poll", 1.0)]),
                ("write", &[("poll", 1.0)], &[("futex", 1.0)]),
                ("mmap", &[("madvise", 0.5), ("futex", 0.5)], &[("brk", 1.0)]),
                ("brk", &[("futex", 1.0)], &[("munmap", 1.0)]),
                ("madvise", &[("futex", 1.0)], &[("munmap", 1.0)]),
                ("munmap", &[("poll", 1.0)], &[("futex", 1.0)]),
                (
                    "futex",
                    &[("poll", 0.5), ("rt_sigprocmask", 0.2), ("getdents64", 0.3)],
                    &[("futex", 1.0)],
                ),
                ("rt_sigprocmask", &[("poll", 1.0)], &[("futex", 1.0)]),
                ("getdents64", &[("getdents64", 0.5), ("close", 0.5)], &[("close", 1.0)]),
                ("close", &[("poll", 1.0)], &[("poll", 1.0)]),
            ],
        ),
        process(
            "htop",
            8.0,
            1,
            "openat",
            &[
                ("openat", &[("read", 1.0)], &[("getdents64", 1.0)]),
                ("read", &[("close", 1.0)], &[("lseek", 1.0)]),
                ("lseek", &[("read", 1.0)], &[("close", 1.0)]),
                ("close", &[("openat", 0.7), ("getdents64", 0.3)], &[("openat", 1.0)]),
                ("getdents64", &[("openat", 0.6), ("select", 0.4)], &[("select", 1.0)]),
                ("select", &[("ioctl", 0.5), ("openat", 0.5)], &[("select", 1.0)]),
                ("ioctl", &[("write", 1.0)], &[("select", 1.0)]),
                ("write", &[("openat", 1.0)], &[("select", 1.0)]),
            ],
        ),
        process(
            "bmon",
            7.0,
            1,
            "nanosleep",
            &[
                ("nanosleep", &[("clock_gettime", 1.0)], &[("nanosleep", 1.0)]),
                ("clock_gettime", &[("sendto", 0.5), ("ioctl", 0.5)], &[("clock_gettime", 1.0)]),
                ("sendto", &[("recvfrom", 1.0)], &[("nanosleep", 1.0)]),
                ("recvfrom", &[("write", 1.0)], &[("poll", 1.0)]),
                ("poll", &[("recvfrom", 1.0)], &[("nanosleep", 1.0)]),
                ("ioctl", &[("write", 1.0)], &[("nanosleep", 1.0)]),
                ("write", &[("nanosleep", 1.0)], &[("nanosleep", 1.0)]),
            ],
        ),
    ]
}

const FD_CALLS: &[&str] = &[
    "read", "write", "close", "fstat", "lseek", "sendto", "recvfrom", "writev", "sendfile",
    "getdents64", "ioctl", "fcntl", "setsockopt", "getsockname", "shutdown", "mmap",
];
const PATH_CALLS: &[&str] = &["open", "openat", "stat"];
const ERRNOS: &[i64] = &[-11, -4, -2, -110, -104];

fn check_distribution(what: &str, dist: &IndexMap<String, f64>) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::config(format!("{what}: empty distribution")));
    }
    if dist.values().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(format!("{what}: probabilities must be finite and non-negative")));
    }
    let sum: f64 = dist.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what}: probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

impl WorkloadConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 {
            return Err(Error::config("n_events must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(Error::config("failure_rate must lie in [0, 1]"));
        }
        if !(self.mean_inter_arrival_us.is_finite() && self.mean_inter_arrival_us > 0.0) {
            return Err(Error::config("mean_inter_arrival_us must be positive"));
        }
        if !(0.0..1.0).contains(&self.stickiness) {
            return Err(Error::config("stickiness must lie in [0, 1)"));
        }
        if !(self.slow_factor.is_finite() && self.slow_factor > 0.0) {
            return Err(Error::config("slow_factor must be positive"));
        }
        if self.n_cpus == 0 {
            return Err(Error::config("n_cpus must be at least 1"));
        }
        if self.hostname.is_empty() || self.hostname.chars().any(char::is_whitespace) {
            return Err(Error::config("hostname must be non-empty without whitespace"));
        }
        if self.processes.is_empty() {
            return Err(Error::config("at least one process is required"));
        }
        for p in &self.processes {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(Error::config(format!("{}: weight must be positive and finite", p.name)));
            }
            if p.threads == 0 {
                return Err(Error::config(format!("{}: threads must be at least 1", p.name)));
            }
            if !p.transitions.contains_key(&p.start) {
                return Err(Error::config(format!("{}: start call {} has no transitions", p.name, p.start)));
            }
            for (from, b) in &p.transitions {
                if from.is_empty() || from.chars().any(char::is_whitespace) {
                    return Err(Error::config(format!("{}: invalid call name {from:?}", p.name)));
                }
                check_distribution(&format!("{}/{from}/ok", p.name), &b.ok)?;
                check_distribution(&format!("{}/{from}/fail", p.name), &b.fail)?;
                for to in b.ok.keys().chain(b.fail.keys()) {
                    if !p.transitions.contains_key(to) {
                        return Err(Error::config(format!(
                            "{}: transition {from} -> {to} leads to a call without transitions",
                            p.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

struct CompiledProcess {
    name: String,
    pid: u32,
    calls: Vec<String>,
    /// Per call: cumulative (next call index, cumulative probability) for ok and fail.
    ok: Vec<Vec<(usize, f64)>>,
    fail: Vec<Vec<(usize, f64)>>,
    slow: Vec<bool>,
    start: usize,
}

fn cumulative(dist: &IndexMap<String, f64>, index: &HashMap<&str, usize>) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    dist.iter()
        .map(|(name, p)| {
            acc += p;
            (index[name.as_str()], acc)
        })
        .collect()
}

fn sample_next(rng: &mut ChaCha8Rng, cum: &[(usize, f64)]) -> usize {
    let u: f64 = rng.random::<f64>() * cum.last().map_or(1.0, |c| c.1);
    cum.iter()
        .find(|(_, c)| u < *c)
        .or(cum.last())
        .map(|(i, _)| *i)
        .unwrap_or(0)
}

#[derive(Clone, Copy)]
enum ThreadState {
    /// Will enter this call next.
    Idle(usize),
    InCall(usize),
}

struct Thread {
    process: usize,
    tid: u32,
    cpu: u32,
    fd: u32,
    state: ThreadState,
}

/// Streaming generator; yields exactly `n_events` events.
pub struct Generator {
    cfg: WorkloadConfig,
    rng: ChaCha8Rng,
    procs: Vec<CompiledProcess>,
    threads: Vec<Thread>,
    /// Cumulative thread selection weights.
    thread_cum: Vec<f64>,
    current: usize,
    clock_ns: u64,
    emitted: usize,
    gap: Exp<f64>,
}

impl Generator {
    pub fn new(cfg: WorkloadConfig) -> Result<Self> {
        cfg.validate()?;
        let mut procs = Vec::with_capacity(cfg.processes.len());
        let mut threads = Vec::new();
        let mut thread_cum = Vec::new();
        let mut acc = 0.0;
        for (pi, p) in cfg.processes.iter().enumerate() {
            let calls: Vec<String> = p.transitions.keys().cloned().collect();
            let index: HashMap<&str, usize> =
                calls.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
            let pid = 1000 + 100 * pi as u32;
            procs.push(CompiledProcess {
                name: p.name.clone(),
                pid,
                ok: p.transitions.values().map(|b| cumulative(&b.ok, &index)).collect(),
                fail: p.transitions.values().map(|b| cumulative(&b.fail, &index)).collect(),
                slow: calls.iter().map(|c| cfg.slow_calls.contains(c)).collect(),
                start: index[p.start.as_str()],
                calls,
            });
            for t in 0..p.threads {
                let tid = pid + t;
                threads.push(Thread {
                    process: pi,
                    tid,
                    cpu: tid % cfg.n_cpus,
                    fd: 3 + (t % 8),
                    state: ThreadState::Idle(procs[pi].start),
                });
                acc += p.weight / p.threads as f64;
                thread_cum.push(acc);
            }
        }
        let gap = Exp::new(1.0 / (cfg.mean_inter_arrival_us * 1000.0))
            .map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let current = Self::pick_thread(&mut rng, &thread_cum);
        Ok(Generator {
            cfg,
            rng,
            procs,
            threads,
            thread_cum,
            current,
            clock_ns: 0,
            emitted: 0,
            gap,
        })
    }

    fn pick_thread(rng: &mut ChaCha8Rng, cum: &[f64]) -> usize {
        let total = cum.last().copied().unwrap_or(1.0);
        let u = rng.random::<f64>() * total;
        cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1)
    }
}

impl Iterator for Generator {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        if self.emitted >= self.cfg.n_events {
            return None;
        }
        if self.emitted > 0 && self.rng.random::<f64>() >= self.cfg.stickiness {
            self.current = Self::pick_thread(&mut self.rng, &self.thread_cum);
        }
        let thread = &mut self.threads[self.current];
        let proc = &self.procs[thread.process];

        let (call, entry, ret) = match thread.state {
            ThreadState::Idle(call) => {
                thread.state = ThreadState::InCall(call);
                (call, true, None)
            }
            ThreadState::InCall(call) => {
                let failed = self.rng.random::<f64>() < self.cfg.failure_rate;
                let ret = if failed {
                    ERRNOS[self.rng.random_range(0..ERRNOS.len())]
                } else {
                    self.rng.random_range(0..4096)
                };
                let table = if failed { &proc.fail[call] } else { &proc.ok[call] };
                thread.state = ThreadState::Idle(sample_next(&mut self.rng, table));
                (call, false, Some(ret))
            }
        };

        let mut gap = self.gap.sample(&mut self.rng);
        if !entry && proc.slow[call] {
            gap *= self.cfg.slow_factor;
        }
        self.clock_ns += (gap.round() as u64).max(1);

        let sysname = &proc.calls[call];
        let mut extra_args = IndexMap::new();
        if entry {
            if FD_CALLS.contains(&sysname.as_str()) {
                extra_args.insert("fd".to_string(), thread.fd.to_string());
            } else if PATH_CALLS.contains(&sysname.as_str()) {
                extra_args.insert("filename".to_string(), format!("/var/www/page{}.html", thread.tid % 7));
            }
        }
        self.emitted += 1;
        Some(Event {
            timestamp_ns: self.clock_ns,
            hostname: self.cfg.hostname.clone(),
            cpu_id: thread.cpu,
            procname: proc.name.clone(),
            pid: proc.pid,
            tid: thread.tid,
            sysname: sysname.clone(),
            entry,
            ret,
            extra_args,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.cfg.n_events - self.emitted;
        (left, Some(left))
    }
}

pub fn generate(config: WorkloadConfig) -> Result<Vec<Event>> {
    Ok(Generator::new(config)?.collect())
}

/// Relative frequencies of process and call names, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    pub procnames: Vec<(String, f64)>,
    pub sysnames: Vec<(String, f64)>,
}

fn sorted_freqs(counts: HashMap<&str, usize>, total: usize) -> Vec<(String, f64)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_owned(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect()
}

pub fn stats(events: &[Event]) -> Result<DistributionReport> {
    if events.is_empty() {
        return Err(Error::Empty("no events to summarize".into()));
    }
    let mut procs: HashMap<&str, usize> = HashMap::new();
    let mut calls: HashMap<&str, usize> = HashMap::new();
    for e in events {
        *procs.entry(&e.procname).or_default() += 1;
        *calls.entry(&e.sysname).or_default() += 1;
    }
    Ok(DistributionReport {
        total: events.len(),
        procnames: sorted_freqs(procs, events.len()),
        sysnames: sorted_freqs(calls, events.len()),
    })
}

impl DistributionReport {
    pub fn frequency(&self, procname: &str) -> Option<f64> {
        self.procnames.iter().find(|(n, _)| n == procname).map(|(_, f)| *f)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("events: {}\n\nprocess names\n", self.total);
        for (name, f) in &self.procnames {
            let _ = writeln!(out, "  {name:<16} {:>7.3}%", 100.0 * f);
        }
        out.push_str("\nsystem calls\n");
        for (name, f) in &self.sysnames {
            let _ = writeln!(out, "  {name:<16} {:>7.3}%", 100.0 * f);
        }
        out
    }
}
