//! Process-mode runtime: real fuzzer processes on CPU cores.
//!
//! Layout under the campaign directory:
//!
//! ```text
//! campaign/
//!   global/                      one file per global seed, name = hex id
//!   round-<k>/<fuzzer>/queue/    group sync channel (instance input dir)
//!   round-<k>/<fuzzer>/unit-<u>/ instance output dir ({out})
//! ```
//!
//! Each harvested seed is replayed against the instrumented runner
//! (`<runner> <target> <seed-file>`), which prints the coverage interchange
//! format and exits 0 (ran) or 77 (crashed). Replay failures degrade to an
//! empty-coverage observation. New findings are copied into the group queue
//! so instances of the same base fuzzer share seeds mid-round.
//!
//! Stops are graceful: SIGTERM, a grace period for queue flushing, then
//! SIGKILL. Pull accounting uses the coordinator's nominal clock, so pulls
//! stay consistent with the virtual-clock runtime.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context, Result};
use ensemble_core::record::{parse_execution, ExecutionResult};
use ensemble_core::seedpool::{Seed, SeedOrigin, SeedPool};
use ensemble_core::{FuzzerId, UnitId};

use crate::adapter::{AdapterKind, AdapterSpec};
use crate::campaign::Runtime;
use crate::config::ProcessConfig;
use crate::report::ClockKind;

/// Seconds between SIGTERM and SIGKILL.
pub const GRACE_PERIOD: f64 = 5.0;

struct ProcInstance {
    fuzzer: FuzzerId,
    child: Option<Child>,
    spawned_at: f64,
    stopped_at: Option<f64>,
    out_dir: PathBuf,
    seen: BTreeSet<PathBuf>,
    seeds_glob: String,
    crashes_glob: String,
}

pub struct ProcessRuntime {
    config: ProcessConfig,
    specs: BTreeMap<FuzzerId, AdapterSpec>,
    round: u32,
    round_dir: PathBuf,
    queues: BTreeMap<FuzzerId, PathBuf>,
    instances: BTreeMap<UnitId, ProcInstance>,
    round_started: Instant,
}

impl ProcessRuntime {
    pub fn new(config: ProcessConfig) -> Result<Self> {
        let specs: BTreeMap<FuzzerId, AdapterSpec> = config
            .adapters
            .iter()
            .filter(|a| a.kind == AdapterKind::Process)
            .map(|a| (a.name.clone(), a.clone()))
            .collect();
        if specs.is_empty() {
            return Err(anyhow!("no process adapters configured"));
        }
        fs::create_dir_all(config.out_dir.join("global"))
            .with_context(|| format!("creating {}", config.out_dir.display()))?;
        Ok(ProcessRuntime {
            config,
            specs,
            round: 0,
            round_dir: PathBuf::new(),
            queues: BTreeMap::new(),
            instances: BTreeMap::new(),
            round_started: Instant::now(),
        })
    }

    /// Persist newly uploaded global seeds (called by the front end after
    /// each campaign; the pool is authoritative, files are a mirror).
    pub fn persist_global(&self, pool: &SeedPool) -> Result<()> {
        let dir = self.config.out_dir.join("global");
        for seed in pool.iter() {
            let path = dir.join(seed.id.to_string());
            if !path.exists() {
                fs::write(&path, &seed.payload)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Ok(())
    }

    fn replay(&self, seed_file: &Path) -> Result<ExecutionResult> {
        let output = Command::new(&self.config.runner)
            .arg(&self.config.target)
            .arg(seed_file)
            .stdin(Stdio::null())
            .output()
            .with_context(|| format!("running {}", self.config.runner.display()))?;
        let text = String::from_utf8_lossy(&output.stdout);
        let result = parse_execution(&text)
            .map_err(|e| anyhow!("runner output for {}: {e}", seed_file.display()))?;
        let crashed_exit = output.status.code() == Some(77);
        if crashed_exit != result.crashed {
            eprintln!(
                "warn: runner exit/report mismatch for {} (exit {:?}, crash line {})",
                seed_file.display(),
                output.status.code(),
                result.crashed
            );
        }
        Ok(result)
    }

    fn scan_glob(dir: &Path, pattern: &str) -> Vec<PathBuf> {
        // Patterns are a relative directory plus one final component that
        // may contain `*` wildcards, e.g. `queue/*` or `crashes/id*`.
        let rel = Path::new(pattern);
        let file_pat = rel
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "*".into());
        let sub = rel.parent().unwrap_or(Path::new(""));
        let scan_dir = dir.join(sub);
        let mut out = Vec::new();
        let entries = match fs::read_dir(&scan_dir) {
            Ok(e) => e,
            Err(_) => return out, // not created yet
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if !path.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            if wildcard_match(&file_pat, &name) {
                out.push(path);
            }
        }
        out.sort();
        out
    }
}

/// Single-component wildcard match: `*` matches any run of characters.
fn wildcard_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        match rest.find(part) {
            Some(pos) => {
                if i == 0 && pos != 0 {
                    return false;
                }
                rest = &rest[pos + part.len()..];
            }
            None => return false,
        }
    }
    if let Some(last) = parts.last() {
        if !last.is_empty() && !name.ends_with(last) {
            return false;
        }
    }
    true
}

#[cfg(target_os = "linux")]
fn bind_to_core(pid: u32, unit: UnitId) {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let core = unit.0 as usize % cores;
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(core, &mut set);
        // Best effort; an instance that cannot be pinned still runs.
        libc::sched_setaffinity(
            pid as libc::pid_t,
            std::mem::size_of::<libc::cpu_set_t>(),
            &set,
        );
    }
}

#[cfg(not(target_os = "linux"))]
fn bind_to_core(_pid: u32, _unit: UnitId) {}

#[cfg(unix)]
fn terminate_gracefully(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(pid, libc::SIGTERM);
    }
    let deadline = Instant::now() + Duration::from_secs_f64(GRACE_PERIOD);
    while Instant::now() < deadline {
        match child.try_wait() {
            Ok(Some(_)) => return,
            Ok(None) => std::thread::sleep(Duration::from_millis(50)),
            Err(_) => break,
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

#[cfg(not(unix))]
fn terminate_gracefully(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

impl Runtime for ProcessRuntime {
    fn begin_round(&mut self, round: u32, locals: &BTreeMap<FuzzerId, SeedPool>) -> Result<()> {
        self.round = round;
        self.round_dir = self.config.out_dir.join(format!("round-{round}"));
        self.queues.clear();
        self.instances.clear();
        self.round_started = Instant::now();
        for (fuzzer, pool) in locals {
            if !self.specs.contains_key(fuzzer) {
                return Err(anyhow!("no adapter spec for fuzzer {fuzzer}"));
            }
            let queue = self.round_dir.join(fuzzer.as_str()).join("queue");
            fs::create_dir_all(&queue)
                .with_context(|| format!("creating {}", queue.display()))?;
            for seed in pool.iter() {
                let path = queue.join(seed.id.to_string());
                fs::write(&path, &seed.payload)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            self.queues.insert(fuzzer.clone(), queue);
        }
        Ok(())
    }

    fn spawn(&mut self, unit: UnitId, fuzzer: &FuzzerId, now: f64) -> Result<()> {
        if self
            .instances
            .get(&unit)
            .map(|i| i.stopped_at.is_none())
            .unwrap_or(false)
        {
            return Err(anyhow!("unit {unit} is occupied"));
        }
        let spec = self
            .specs
            .get(fuzzer)
            .ok_or_else(|| anyhow!("no adapter spec for fuzzer {fuzzer}"))?;
        let queue = self
            .queues
            .get(fuzzer)
            .ok_or_else(|| anyhow!("fuzzer {fuzzer} has no group this round"))?
            .clone();
        let out_dir = self
            .round_dir
            .join(fuzzer.as_str())
            .join(format!("unit-{}", unit.0));
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        let argv = spec.argv(
            &self.config.target.to_string_lossy(),
            &queue.to_string_lossy(),
            &out_dir.to_string_lossy(),
        );
        if argv.is_empty() {
            return Err(anyhow!("adapter {fuzzer}: empty launch command"));
        }
        let log = fs::File::create(out_dir.join("fuzzer.log"))?;
        let err_log = log.try_clone()?;
        let child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::from(log))
            .stderr(Stdio::from(err_log))
            .spawn()
            .with_context(|| format!("launching `{}` for {fuzzer}", argv.join(" ")))?;
        bind_to_core(child.id(), unit);
        self.instances.insert(
            unit,
            ProcInstance {
                fuzzer: fuzzer.clone(),
                child: Some(child),
                spawned_at: now,
                stopped_at: None,
                out_dir,
                seen: BTreeSet::new(),
                seeds_glob: spec.seeds_glob.clone(),
                crashes_glob: spec.crashes_glob.clone(),
            },
        );
        Ok(())
    }

    fn alive(&mut self, unit: UnitId, _now: f64) -> bool {
        match self.instances.get_mut(&unit) {
            Some(inst) => {
                if inst.stopped_at.is_some() {
                    return false;
                }
                match inst.child.as_mut().and_then(|c| c.try_wait().ok()) {
                    Some(Some(_status)) => false, // exited on its own
                    Some(None) => true,
                    None => false,
                }
            }
            None => false,
        }
    }

    fn harvest(&mut self, unit: UnitId, _now: f64) -> Result<Vec<(Seed, ExecutionResult)>> {
        let (fuzzer, out_dir, seeds_glob, crashes_glob, already) =
            match self.instances.get(&unit) {
                Some(i) => (
                    i.fuzzer.clone(),
                    i.out_dir.clone(),
                    i.seeds_glob.clone(),
                    i.crashes_glob.clone(),
                    i.seen.clone(),
                ),
                None => return Ok(Vec::new()),
            };
        let mut fresh: Vec<PathBuf> = Vec::new();
        for pattern in [&seeds_glob, &crashes_glob] {
            for path in Self::scan_glob(&out_dir, pattern) {
                if !already.contains(&path) && !fresh.contains(&path) {
                    fresh.push(path);
                }
            }
        }
        fresh.sort();
        let mut batch = Vec::new();
        let queue = self.queues.get(&fuzzer).cloned();
        for path in &fresh {
            let payload = match fs::read(path) {
                Ok(p) => p,
                Err(err) => {
                    eprintln!("warn: cannot read finding {}: {err}", path.display());
                    continue;
                }
            };
            let result = match self.replay(path) {
                Ok(r) => r,
                Err(err) => {
                    // Flagged: kept with empty coverage so the seed is not
                    // lost, but it cannot score.
                    eprintln!("warn: replay failed, flagging {}: {err:#}", path.display());
                    ExecutionResult::ok(Default::default())
                }
            };
            let seed = Seed::new(payload, SeedOrigin::Fuzzer(fuzzer.clone()), self.round);
            // Partial sync: make the finding visible to the whole group.
            if let Some(queue) = &queue {
                let shared = queue.join(seed.id.to_string());
                if !shared.exists() {
                    let _ = fs::copy(path, &shared);
                }
            }
            batch.push((seed, result));
        }
        if let Some(inst) = self.instances.get_mut(&unit) {
            inst.seen.extend(fresh);
        }
        Ok(batch)
    }

    fn stop(&mut self, unit: UnitId, now: f64) -> f64 {
        match self.instances.get_mut(&unit) {
            Some(inst) => {
                if let Some(stopped) = inst.stopped_at {
                    return stopped - inst.spawned_at;
                }
                if let Some(mut child) = inst.child.take() {
                    terminate_gracefully(&mut child);
                }
                inst.stopped_at = Some(now);
                now - inst.spawned_at
            }
            None => 0.0,
        }
    }

    fn end_round(&mut self) -> Result<()> {
        // Anything still running is torn down hard; stops should already
        // have happened through the coordinator.
        for inst in self.instances.values_mut() {
            if let Some(mut child) = inst.child.take() {
                terminate_gracefully(&mut child);
            }
        }
        self.instances.clear();
        Ok(())
    }

    fn wait_until(&mut self, now: f64) {
        let elapsed = self.round_started.elapsed().as_secs_f64();
        if now > elapsed {
            std::thread::sleep(Duration::from_secs_f64(now - elapsed));
        }
    }

    fn clock_kind(&self) -> ClockKind {
        ClockKind::Wall
    }
}
