use std::fmt::Write as _;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Kernel clock ticks per second as exposed in /proc (USER_HZ).
const TICKS_PER_SECOND: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResourceSample {
    /// Seconds since the sampler started.
    pub time: f64,
    pub cpu_percent: f64,
    pub ram_percent: f64,
    pub rss_bytes: u64,
}

fn cpu_ticks() -> Option<u64> {
    let stat = fs::read_to_string("/proc/self/stat").ok()?;
    // Fields after the parenthesised command name; utime and stime are the
    // 14th and 15th overall.
    let rest = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    Some(f.get(11)?.parse::<u64>().ok()? + f.get(12)?.parse::<u64>().ok()?)
}

fn kib_field(text: &str, key: &str) -> Option<u64> {
    let line = text.lines().find(|l| l.starts_with(key))?;
    line[key.len()..].split_whitespace().next()?.parse().ok()
}

fn rss_bytes() -> Option<u64> {
    kib_field(&fs::read_to_string("/proc/self/status").ok()?, "VmRSS:").map(|k| k * 1024)
}

fn total_memory() -> Option<u64> {
    kib_field(&fs::read_to_string("/proc/meminfo").ok()?, "MemTotal:").map(|k| k * 1024)
}

/// Background sampler of process CPU and resident memory.
pub struct ResourceLog {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<ResourceSample>>>,
}

impl ResourceLog {
    /// Starts sampling every `interval` seconds. `None`, with a warning, when
    /// the process counters cannot be read.
    pub fn start(interval: f64) -> Option<ResourceLog> {
        let (Some(_), Some(_), Some(total)) = (cpu_ticks(), rss_bytes(), total_memory()) else {
            log::warn!("process resource counters unavailable; resource log disabled");
            return None;
        };
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let period = Duration::from_secs_f64(interval.max(1e-3));
        let handle = std::thread::spawn(move || {
            let start = Instant::now();
            let mut samples = Vec::new();
            let mut last = (start, cpu_ticks().unwrap_or(0));
            loop {
                // Sleep in short slices so stopping is prompt.
                let wake = last.0 + period;
                while Instant::now() < wake && !flag.load(Ordering::Relaxed) {
                    std::thread::sleep((wake - Instant::now()).min(Duration::from_millis(5)));
                }
                if flag.load(Ordering::Relaxed) {
                    break;
                }
                let now = Instant::now();
                let ticks = cpu_ticks().unwrap_or(last.1);
                let dt = (now - last.0).as_secs_f64();
                let rss = rss_bytes().unwrap_or(0);
                samples.push(ResourceSample {
                    time: (now - start).as_secs_f64(),
                    cpu_percent: (ticks - last.1) as f64 / TICKS_PER_SECOND / dt * 100.0,
                    ram_percent: rss as f64 / total as f64 * 100.0,
                    rss_bytes: rss,
                });
                last = (now, ticks);
            }
            samples
        });
        Some(ResourceLog { stop, handle: Some(handle) })
    }

    pub fn finish(mut self) -> Vec<ResourceSample> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.take().and_then(|h| h.join().ok()).unwrap_or_default()
    }
}

impl Drop for ResourceLog {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn resources_csv(samples: &[ResourceSample]) -> String {
    let mut s = String::from("time,cpu_percent,ram_percent\n");
    for r in samples {
        let _ = writeln!(s, "{:.3},{:.2},{:.4}", r.time, r.cpu_percent, r.ram_percent);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResourceSummary {
    pub cpu_mean: f64,
    pub cpu_std: f64,
    pub ram_max: f64,
    /// Least-squares RAM growth, percent per second.
    pub ram_slope: f64,
    /// Same fit in bytes per second.
    pub rss_slope: f64,
    /// Time at which the fitted RAM line reaches 100%; `None` without growth.
    pub exhaustion_time: Option<f64>,
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// `None` for an empty log.
pub fn summarize(samples: &[ResourceSample]) -> Option<ResourceSummary> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let cpu_mean = samples.iter().map(|s| s.cpu_percent).sum::<f64>() / n;
    let cpu_std = (samples.iter().map(|s| (s.cpu_percent - cpu_mean).powi(2)).sum::<f64>() / n).sqrt();
    let ram_max = samples.iter().map(|s| s.ram_percent).fold(0.0, f64::max);
    let t: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let ram: Vec<f64> = samples.iter().map(|s| s.ram_percent).collect();
    let rss: Vec<f64> = samples.iter().map(|s| s.rss_bytes as f64).collect();
    let (ram_slope, intercept) = fit_line(&t, &ram);
    let (rss_slope, _) = fit_line(&t, &rss);
    let exhaustion_time = (ram_slope > 0.0).then(|| (100.0 - intercept) / ram_slope);
    Some(ResourceSummary { cpu_mean, cpu_std, ram_max, ram_slope, rss_slope, exhaustion_time })
}

impl std::fmt::Display for ResourceSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "CPU (mean: {:.1} %, std: {:.1} %) and RAM (max: {:.2} %) usage", self.cpu_mean, self.cpu_std, self.ram_max)?;
        write!(f, "RAM growth {:.6} %/s ({:.0} B/s)", self.ram_slope, self.rss_slope)?;
        match self.exhaustion_time {
            Some(t) => write!(f, ", memory exhaustion roughly estimated to {t:.0} s"),
            None => write!(f, ", no growth"),
        }
    }
}
