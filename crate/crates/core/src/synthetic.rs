//! Seeded generator of small Java review corpora with a known labelling rule.
//!
//! A sample is accepted exactly when its revised method calls the marker
//! method and its comment contains the word "fix". Two projects use disjoint
//! identifier pools around the same statement shapes.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{derive_seed, rng_from};
use crate::data::ReviewSample;

pub const MARKER: &str = "validate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Project {
    A,
    B,
}

struct Pools {
    repo: &'static str,
    methods: &'static [&'static str],
    vars: &'static [&'static str],
    objects: &'static [&'static str],
    calls: &'static [&'static str],
}

const POOL_A: Pools = Pools {
    repo: "project-a",
    methods: &[
        "count", "load", "merge", "scan", "flush", "resize", "apply", "drain",
    ],
    vars: &["total", "item", "index", "limit", "size", "offset"],
    objects: &["list", "cache", "queue"],
    calls: &["add", "remove", "push", "poll"],
};

const POOL_B: Pools = Pools {
    repo: "project-b",
    methods: &[
        "fetch", "store", "split", "sort", "emit", "probe", "close", "open",
    ],
    vars: &["row", "cell", "key", "width", "depth", "mark"],
    objects: &["table", "ledger", "stream"],
    calls: &["put", "get", "seek", "write"],
};

fn pools(p: Project) -> &'static Pools {
    match p {
        Project::A => &POOL_A,
        Project::B => &POOL_B,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty pool")
}

fn statement(rng: &mut ChaCha8Rng, p: &Pools, v: &str, a: &str) -> String {
    let n = rng.gen_range(1..10);
    let op = pick(rng, &["+", "-", "*"]);
    let w = pick(rng, p.vars);
    match rng.gen_range(0..6) {
        0 => format!("{v} = {v} {op} {a};"),
        1 => format!("if ({a} > {n}) {{ {v} = {a} {op} {n}; }}"),
        2 => format!("{}.{}({v});", pick(rng, p.objects), pick(rng, p.calls)),
        3 => format!("for (int i = 0; i < {n}; i++) {{ {v} += i; }}"),
        4 => format!("while ({v} > {n}) {{ {v}--; }}"),
        _ => format!("int {w}{n} = {v} {op} {n};"),
    }
}

/// Source of one random method body.
fn method(rng: &mut ChaCha8Rng, p: &Pools, extra: usize) -> (String, String, Vec<String>) {
    let name = format!(
        "{}{}",
        pick(rng, p.methods),
        pick(rng, &["", "All", "Next", "Once"])
    );
    let a = pick(rng, p.vars).to_string();
    let v = loop {
        let v = pick(rng, p.vars);
        if v != a {
            break v.to_string();
        }
    };
    let body: Vec<String> = (0..rng.gen_range(2..4) + extra)
        .map(|_| statement(rng, p, &v, &a))
        .collect();
    let header = format!("int {name}(int {a}) {{ int {v} = {a};");
    (header, format!("return {v}; }}"), body)
}

fn render(header: &str, body: &[String], footer: &str) -> String {
    format!("{header} {} {footer}", body.join(" "))
}

/// `n` distinct method sources from one project.
pub fn fragments(project: Project, n: usize, seed: u64) -> Vec<String> {
    let p = pools(project);
    let mut rng = rng_from(derive_seed(seed, "synthetic.fragments", 0));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (h, f, body) = method(&mut rng, p, 0);
        let src = render(&h, &body, &f);
        if seen.insert(src.clone()) {
            out.push(src);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub project: Project,
    pub samples: usize,
    /// Probability that the revision inserts the marker call.
    pub marker_rate: f64,
    /// Probability that the comment asks for a fix.
    pub fix_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(project: Project, samples: usize, seed: u64) -> Self {
        Self {
            project,
            samples,
            marker_rate: 0.5,
            fix_rate: 0.5,
            seed,
        }
    }
}

const FIX_COMMENTS: &[&str] = &[
    "please fix the {x} check",
    "fix {x} before merge",
    "this should fix the {x} bug",
    "can you fix {x} here",
];

const OTHER_COMMENTS: &[&str] = &[
    "please rename {x}",
    "looks good but update {x}",
    "consider moving {x}",
    "why is {x} needed here",
];

/// Labelled review samples following the marker-and-fix rule.
pub fn review_corpus(spec: &SyntheticSpec) -> Vec<ReviewSample> {
    let p = pools(spec.project);
    let mut rng = rng_from(derive_seed(
        spec.seed,
        "synthetic.corpus",
        spec.project as u64,
    ));
    (0..spec.samples)
        .map(|i| {
            let (header, footer, body) = method(&mut rng, p, 0);
            let original = render(&header, &body, &footer);
            let marker = rng.gen_bool(spec.marker_rate);
            let fix = rng.gen_bool(spec.fix_rate);
            let arg = pick(&mut rng, p.vars);
            let mut revised_body = body.clone();
            let at = rng.gen_range(0..=revised_body.len());
            let inserted = if marker {
                format!("{arg} = {MARKER}({arg});")
            } else {
                statement(&mut rng, p, arg, arg)
            };
            revised_body.insert(at, inserted);
            let revised = render(&header, &revised_body, &footer);
            let template = if fix {
                pick(&mut rng, FIX_COMMENTS)
            } else {
                pick(&mut rng, OTHER_COMMENTS)
            };
            let comment = template.replace("{x}", pick(&mut rng, p.vars));
            ReviewSample::from_sources(
                &format!("{}-{i}", p.repo),
                p.repo,
                &original,
                &revised,
                &comment,
                u8::from(marker && fix),
            )
        })
        .collect()
}
