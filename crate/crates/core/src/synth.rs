//! Deterministic synthetic corpora.
//!
//! These generators build bug-report collections with known, controllable
//! structure: a corpus where only token ORDER carries the owner signal, a
//! corpus with a skewed developer distribution whose signal lives in the
//! descriptions, and a messy realistic corpus for end-to-end smoke runs.
//! Every generator is a pure function of its arguments, so two calls with
//! the same parameters yield identical corpora.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::BugReport;
use crate::util::derive_seed;

/// Number of distinct words in the order-sensitive corpus.
pub const ORDER_ALPHABET: usize = 50;

pub const OWNER_FORWARD: &str = "dev-forward";
pub const OWNER_REVERSE: &str = "dev-reverse";

fn order_word(i: usize) -> String {
    format!("w{i:02}")
}

/// A corpus where the owner is determined ONLY by token order.
///
/// Each description is one full cycle over the 50-word alphabet starting
/// at a rotating offset, walked forward for one owner and backward for the
/// other; the title repeats the starting word. For every start position
/// both owners have a report with exactly the same token multiset, so any
/// order-blind (bag-of-words) feature carries zero class signal, while the
/// direction of traversal determines the owner with certainty. Directions
/// strictly alternate in chronological order, keeping every contiguous
/// fold split balanced.
pub fn word_order_corpus(num_reports: usize, seed: u64) -> Vec<BugReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let phase = rng.gen_range(0..ORDER_ALPHABET);
    let mut reports = Vec::with_capacity(num_reports);
    let mut time = 1_500_000_000i64;
    for i in 0..num_reports {
        let forward = i % 2 == 0;
        let start = (i / 2 + phase) % ORDER_ALPHABET;
        let words: Vec<String> = (0..ORDER_ALPHABET)
            .map(|step| {
                let idx = if forward {
                    (start + step) % ORDER_ALPHABET
                } else {
                    (start + ORDER_ALPHABET - step) % ORDER_ALPHABET
                };
                order_word(idx)
            })
            .collect();
        time += rng.gen_range(30..90);
        reports.push(BugReport {
            id: i as i64,
            title: order_word(start),
            description: words.join(" "),
            owner: Some(if forward { OWNER_FORWARD } else { OWNER_REVERSE }.to_string()),
            status: "Fixed".to_string(),
            report_type: Some("Bug".to_string()),
            reported_time: time,
        });
    }
    reports
}

const TITLE_POOL: &[&str] = &[
    "issue", "report", "observed", "failure", "problem", "window", "build",
    "update", "behavior", "regression", "screen", "startup",
];

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|d| 1.0 / d as f64).sum()
}

fn noise_word(i: usize) -> String {
    format!("word{i:03}")
}

fn signature_word(dev: usize) -> String {
    format!("sig{dev:02}")
}

/// A corpus with `num_devs` developers of skewed frequency (developer d is
/// roughly 1/(d+1) as likely as developer 0). The owner's signature token
/// appears in most DESCRIPTIONS; titles are generic filler, so title-only
/// features lose the discriminative signal. A minority of reports omit
/// the signature entirely and a few contain a stray signature of another
/// developer, which keeps sparse classes genuinely hard to rank.
pub fn skewed_developer_corpus(num_reports: usize, num_devs: usize, seed: u64) -> Vec<BugReport> {
    assert!(num_devs >= 2, "need at least two developers");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let weights: Vec<f64> = (0..num_devs).map(|d| 1.0 / (d + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let unit = Uniform::new(0.0f64, total);
    let pick_dev = |rng: &mut ChaCha8Rng| {
        let mut x = unit.sample(rng);
        for (d, w) in weights.iter().enumerate() {
            if x < *w {
                return d;
            }
            x -= w;
        }
        num_devs - 1
    };

    let mut reports = Vec::with_capacity(num_reports);
    let mut time = 1_400_000_000i64;
    for i in 0..num_reports {
        let dev = pick_dev(&mut rng);
        let title: Vec<&str> = (0..rng.gen_range(3..=5))
            .map(|_| TITLE_POOL[rng.gen_range(0..TITLE_POOL.len())])
            .collect();
        let mut body: Vec<String> = Vec::new();
        if rng.gen_bool(0.7) {
            for _ in 0..rng.gen_range(1..=3) {
                body.push(signature_word(dev));
            }
        }
        if rng.gen_bool(0.1) {
            body.push(signature_word(rng.gen_range(0..num_devs)));
        }
        for _ in 0..rng.gen_range(6..=12) {
            body.push(noise_word(rng.gen_range(0..150)));
        }
        // Interleave so the signature is not positionally privileged.
        for j in (1..body.len()).rev() {
            body.swap(j, rng.gen_range(0..=j));
        }
        time += rng.gen_range(30..600);
        reports.push(BugReport {
            id: i as i64,
            title: title.join(" "),
            description: body.join(" "),
            owner: Some(format!("dev{dev:02}@example.com")),
            status: "Fixed".to_string(),
            report_type: Some("Bug".to_string()),
            reported_time: time,
        });
    }
    reports
}

const REALISTIC_COMPONENTS: &[&str] = &[
    "renderer", "network stack", "bookmarks", "omnibox", "profile sync",
    "extension loader", "tab strip", "download manager", "printing", "webgl",
];

const REALISTIC_VERBS: &[&str] = &[
    "crashes", "hangs", "flickers", "leaks memory", "ignores input",
    "renders incorrectly", "times out", "loses state",
];

const REALISTIC_CONTEXT: &[&str] = &[
    "after resume from sleep", "on the second monitor", "when cookies are cleared",
    "with hardware acceleration enabled", "under high cpu load", "after the latest update",
    "in incognito mode", "during session restore",
];

/// A messy end-to-end corpus: roughly 60% of reports are triaged under the
/// Chromium-style rules (Fixed/Verified, type Bug, non-empty owner) and
/// the rest fail one of those conditions; descriptions mix prose with
/// URLs, hex addresses and stack frames that the cleaning pass must strip,
/// and a few are empty outright.
pub fn realistic_corpus(num_reports: usize, seed: u64) -> Vec<BugReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let num_devs = 25;
    let mut reports = Vec::with_capacity(num_reports);
    let mut time = 1_300_000_000i64;
    for i in 0..num_reports {
        let component = REALISTIC_COMPONENTS[rng.gen_range(0..REALISTIC_COMPONENTS.len())];
        let verb = REALISTIC_VERBS[rng.gen_range(0..REALISTIC_VERBS.len())];
        let context = REALISTIC_CONTEXT[rng.gen_range(0..REALISTIC_CONTEXT.len())];
        let title = format!("{component} {verb} {context}");

        let description = if rng.gen_bool(0.05) {
            String::new()
        } else {
            let mut lines = vec![format!(
                "the {component} {verb} {context} and must be restarted to recover"
            )];
            if rng.gen_bool(0.4) {
                lines.push(format!(
                    "see http://crash.example.com/report/{} for the full dump",
                    rng.gen_range(10_000..99_999)
                ));
            }
            if rng.gen_bool(0.3) {
                lines.push(format!("faulting address 0x{:08x}", rng.gen::<u32>()));
            }
            if rng.gen_bool(0.3) {
                lines.push(format!(
                    "    at {}::handle_event(events.cc:{})",
                    component.split_whitespace().next().unwrap(),
                    rng.gen_range(10..900)
                ));
            }
            lines.push(format!(
                "reproduced on build {}.0.{}",
                rng.gen_range(80..120),
                rng.gen_range(1000..6000)
            ));
            lines.join("\n")
        };

        // 60% triaged; the rest miss one requirement each. Ownership is
        // harmonically skewed like real trackers: a few prolific
        // developers and a long tail, so per-developer thresholds bite.
        let triaged = rng.gen_bool(0.6);
        let mut x = rng.gen_range(0.0..harmonic(num_devs));
        let mut dev = num_devs - 1;
        for d in 0..num_devs {
            let w = 1.0 / (d + 1) as f64;
            if x < w {
                dev = d;
                break;
            }
            x -= w;
        }
        let (owner, status, report_type) = if triaged {
            (
                Some(format!("dev{dev:02}@example.com")),
                if rng.gen_bool(0.7) { "Fixed" } else { "Verified" }.to_string(),
                Some("Bug".to_string()),
            )
        } else {
            match rng.gen_range(0..3) {
                0 => (None, "Untriaged".to_string(), Some("Bug".to_string())),
                1 => (
                    Some(format!("dev{dev:02}@example.com")),
                    "Assigned".to_string(),
                    Some("Bug".to_string()),
                ),
                _ => (
                    Some(format!("dev{dev:02}@example.com")),
                    "Fixed".to_string(),
                    Some("Feature".to_string()),
                ),
            }
        };
        time += rng.gen_range(120..3_600);
        reports.push(BugReport {
            id: 100_000 + i as i64,
            title,
            description,
            owner,
            status,
            report_type,
            reported_time: time,
        });
    }
    reports
}
