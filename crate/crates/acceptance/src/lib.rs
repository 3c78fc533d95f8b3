//! Acceptance checks. Each check returns a one-line summary of what it
//! measured, or a description of the first violated condition.

pub mod acquisition;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod windowing;

use std::time::Instant;

pub type Check = Result<String, String>;

pub struct Criterion {
    pub name: &'static str,
    pub run: fn() -> Check,
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { name: "gradient correctness", run: model::gradients },
    Criterion { name: "relation head oracle", run: model::head_oracle },
    Criterion { name: "acquisition math", run: acquisition::check },
    Criterion { name: "windowing", run: windowing::check },
    Criterion { name: "metrics", run: metrics::check },
    Criterion { name: "learnability", run: model::learnability },
    Criterion { name: "active learning end to end", run: experiments::active_learning },
    Criterion { name: "warm start", run: experiments::warm_start },
    Criterion { name: "reproducibility", run: experiments::reproducibility },
];

/// Fails the enclosing check with a formatted message.
#[macro_export]
macro_rules! require {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs `f` and fails when it takes longer than `limit_secs`.
pub fn timed(limit_secs: u64, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let detail = f()?;
    let secs = start.elapsed().as_secs_f64();
    require!(secs < limit_secs as f64, "{detail}; took {secs:.1}s, limit {limit_secs}s");
    Ok(format!("{detail}; {secs:.1}s"))
}
